//! Frames in, normalized clip batches out.

pub mod ppm;
pub mod resize;
pub mod sampler;
pub mod store;
pub mod synth;

pub use ppm::Frame;
pub use sampler::{BatchSampler, SamplerState};
pub use store::{
    clip_ranges, denormalize, export_clip, ingest, normalize, split_sources, ClipRecord, ClipStore, SourceRecord, Split,
};
pub use synth::{synthesize_frames, SynthParams};
