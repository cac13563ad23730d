//! Mixed-precision quantization of learned image compression models.
//!
//! The crate is `no_std` with `alloc`. It holds the hyperprior codec, the
//! affine quantizers, sensitivity-driven bit assignment, the β search, model
//! size accounting, training loops and RD metrics. File formats, image IO and
//! the command line live in the `fmpq` crate.

#![no_std]
// NaN must fail the `!(x > 0)` guards; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

use alloc::string::String;

pub mod assign;
pub mod conv;
pub mod entropy;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod quant;
pub mod rd;
pub mod real;
pub mod search;
pub mod size;
pub mod tensor;
pub mod train;

pub use assign::{assign_bits, BitAssignment, SensitivityRecord, ZetaSource, ZetaTable};
pub use metrics::{bd_rate, bit_distribution_report, psnr, RDCurve};
pub use model::{build_model, LicModel, Mode, Variant, WidthConfig};
pub use quant::{attach_quantizers, QuantParams, QuantizedModel};
pub use rd::{rd_loss, RDMetrics};
pub use real::Real;
pub use search::{adaptive_search, exhaustive_search, SearchResult};
pub use size::{compression_ratio, layer_size_bits, SizeReport};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown model variant `{0}`")]
    InvalidVariant(String),
    #[error("invalid width configuration: {0}")]
    InvalidWidth(String),
    #[error("quality index {0} out of range 0..6")]
    InvalidQuality(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bit assignment has {got} entries, model has {expected} quantizable layers")]
    AssignmentLength { expected: usize, got: usize },
    #[error("likelihood {0} is not positive")]
    NonPositiveLikelihood(f64),
    #[error("full-precision RD loss {0} is not positive and finite")]
    DegenerateModel(f64),
    #[error("bit width {0} is out of range")]
    InvalidBits(u32),
    #[error("layer {0} does not exist")]
    InvalidLayer(usize),
    #[error("no sensitivity value for layer {layer} at {bits} bits")]
    MissingZeta { layer: usize, bits: u32 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("RD curve needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid RD curve: {0}")]
    InvalidCurve(String),
    #[error("RD curves do not overlap in PSNR")]
    NoOverlap,
    #[error("assignments disagree on layer count: expected {expected}, got {got}")]
    InconsistentLayerCount { expected: usize, got: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
