//! Two-stage video generation from a single frame: networks, losses,
//! training, data handling and evaluation.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod metrics;
pub mod rng;
pub mod training;

pub use config::RunConfig;
pub use error::{Error, Result};
