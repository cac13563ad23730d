//! Data loading, checkpoints, reporting and the command-line front end for
//! mixed-precision quantization of learned image codecs.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod zeta;

pub use error::{Error, Result};
