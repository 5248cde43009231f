//! Decoding strategies and evaluation metrics for open-ended text generation.

pub mod decoding;
pub mod error;
pub mod harness;
pub mod lm;
pub mod metrics;
pub mod text;

pub use error::{Error, Result};
