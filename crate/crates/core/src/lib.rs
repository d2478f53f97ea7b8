//! Depth-map to RGB face translation with a conditional GAN, plus the
//! reconstruction, attribute and landmark metrics used to evaluate it.

pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
