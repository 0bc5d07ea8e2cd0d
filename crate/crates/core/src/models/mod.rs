//! Network layouts and their parameterized forward passes.

pub mod network;
pub mod spec;

pub use network::{duplicate_frame, first_frame, DiscriminatorOutput, GeneratorOutput, LayerParams, Network};
pub use spec::{
    build_discriminator, build_generator, LayerShape, LayerSpec, NetworkRole, NetworkSpec, Resolution, SkipPair,
    Stage, Width, CLIP_FRAMES, IMAGE_CHANNELS,
};
