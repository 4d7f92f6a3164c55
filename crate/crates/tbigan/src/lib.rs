//! Transformer bidirectional GAN for unsupervised anomaly detection in
//! synchrophasor (PMU) streams.

pub mod cli;
pub mod data;
pub mod detect;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
