pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod color;
pub mod data;
pub mod error;
pub mod fetch;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod render;
pub mod train;

pub use error::{Error, Result};
