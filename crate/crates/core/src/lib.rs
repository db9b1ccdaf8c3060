//! Speech-to-face portrait models, data pipeline and training harness.

pub mod audio;
mod binio;
pub mod cbam;
pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod embedder;
pub mod encoder;
pub mod error;
pub mod feature;
pub mod gender;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod params;
pub mod preset;
pub mod prior;
pub mod train;

pub use error::{CoreError, Result};
pub use preset::Preset;
