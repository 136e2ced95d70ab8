//! Co-speech gesture generation with motion tokens and a small sequence model.

pub mod audio;
mod binfmt;
pub mod config;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod rvq;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
