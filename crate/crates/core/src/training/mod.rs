//! Optimizer, checkpoints and the two-stage training loops.

pub mod adam;
pub mod checkpoint;
pub mod trainer;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use trainer::{discriminator_loss, generator_loss, network_from_checkpoint, DiscriminatorLoss, GeneratorLoss, Trainer};
