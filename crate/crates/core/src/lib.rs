//! Post-training quantization toolkit built around equivalent channel-wise
//! shifting and scaling of transformer activations.
//!
//! Activation outliers in transformer blocks sit in a few fixed channels and
//! lean to one side of zero, which inflates the tensor range that per-tensor
//! quantization has to cover. This crate computes per-channel shift and
//! scale vectors that suppress those outliers, migrates their inverses into
//! LayerNorm parameters, downstream linear layers, and residual branches so
//! the floating-point network is unchanged, and measures the quantization
//! error each calibration method leaves behind on simulated transformer
//! sub-blocks.
//!
//! Module map:
//! - [`tensor`]: dense f64 matrices, matmul, softmax, LayerNorm
//! - [`quant`]: fake quantization and range calibrators
//! - [`transform`]: shift/scale vectors and equivalence-preserving migration
//! - [`blocks`]: Pre-LN attention and Post-LN feed-forward sub-blocks
//! - [`objective`]: output-change objectives and the threshold grid search
//! - [`io`]: `.ost` tensor container and the synthetic outlier generator
//! - [`report`]: deterministic line-oriented reports
//! - [`pipeline`]: the analyze/suppress/compare/eval commands as library calls
//!
//! With the default `parallel` feature, matmul, the candidate grid search,
//! and multi-method comparisons run on rayon; disabling the feature falls
//! back to sequential loops with bit-identical results.

pub mod benchmark;
pub mod blocks;
pub mod error;
pub mod io;
pub mod objective;
pub mod pipeline;
pub mod quant;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod transform;

pub use error::{Error, Result};
pub use tensor::Matrix;

/// Tool version recorded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
