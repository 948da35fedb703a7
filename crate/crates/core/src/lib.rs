//! Margin cross-entropy training for quantized and binarized MLPs, and
//! bit-error tolerance measurement by fault injection into stored weights.

pub mod cli;
pub mod data;
pub mod error;
pub mod fault;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod quant;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
