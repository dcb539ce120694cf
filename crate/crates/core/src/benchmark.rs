//! Seeded synthetic fixtures: the canonical planted-outlier benchmark case
//! and random block builders used by the acceptance suite, the regression
//! tests, and the criterion benches.
//!
//! The canonical case pairs a calibration activation with two asymmetric
//! outlier channels (whole-tensor range about (-97, 43) over a near-zero
//! background) with a seeded sub-block whose LayerNorm scale correlates with
//! the channel magnitudes, the way trained models tend to behave. Weight
//! magnitudes sit around 0.04 so that per-channel weight quantization starts
//! out easy and only degrades when a transform inflates the weights.

use crate::blocks::{BlockBody, BlockGraph, LayerNormParams};
use crate::error::Result;
use crate::io::{generate_synthetic, SyntheticSpec};
use crate::rng::Rng;
use crate::tensor::{channel_stats, Matrix};
use crate::transform::{LinearLayer, TransformVectors};

/// Width of the canonical benchmark activation.
pub const BENCH_WIDTH: usize = 64;
/// Calibration rows of the canonical benchmark.
pub const BENCH_ROWS: usize = 32;
/// Head width for the attention variant.
pub const BENCH_HEAD_DIM: usize = 16;
/// Weight sigma for seeded layers.
pub const BENCH_WEIGHT_SIGMA: f64 = 0.04;

/// One benchmark instance: the problematic activation (as the LayerNorm
/// output side of the block) and the sub-block consuming it.
#[derive(Debug, Clone)]
pub struct BenchCase {
    pub activation: Matrix,
    pub block: BlockGraph,
}

pub fn random_layer(rng: &mut Rng, out_w: usize, in_w: usize, sigma: f64) -> LinearLayer {
    LinearLayer::new(
        Matrix::from_fn(out_w, in_w, |_, _| rng.normal_scaled(0.0, sigma)),
        (0..out_w).map(|_| rng.normal_scaled(0.0, 0.01)).collect(),
    )
    .expect("seeded layer shapes are consistent")
}

/// LayerNorm parameters whose gamma tracks the per-channel magnitude of the
/// given activation (clamped to [0.7, 6]), mimicking trained models where
/// the LayerNorm scale is what amplifies outlier channels. Used both to
/// shape block outputs and as the vector the fixed-gamma baseline migrates.
pub fn gamma_correlated_ln(activation: &Matrix) -> Result<LayerNormParams> {
    let stats = channel_stats(activation)?;
    let gamma: Vec<f64> = stats
        .iter()
        .map(|&(lo, hi)| (lo.abs().max(hi.abs()) / 24.0).clamp(0.7, 6.0))
        .collect();
    let beta: Vec<f64> = stats
        .iter()
        .map(|&(lo, hi)| (lo + hi) / 2.0 * 0.01)
        .collect();
    Ok(LayerNormParams {
        gamma,
        beta,
        eps: 1e-5,
    })
}

/// Canonical planted-outlier case with a Post-LN FFN block (the
/// single-linear objective setting).
pub fn planted_ffn_case(seed: u64) -> Result<BenchCase> {
    let spec = SyntheticSpec::asymmetric_outliers(BENCH_ROWS, BENCH_WIDTH, seed);
    let activation = generate_synthetic(&spec)?;
    let mut rng = Rng::new(seed ^ 0xB10C_F0F0);
    let ln = gamma_correlated_ln(&activation)?;
    let block = BlockGraph::post_ln_ffn(
        ln,
        random_layer(&mut rng, 4 * BENCH_WIDTH, BENCH_WIDTH, BENCH_WEIGHT_SIGMA),
        random_layer(&mut rng, BENCH_WIDTH, 4 * BENCH_WIDTH, BENCH_WEIGHT_SIGMA),
    )?;
    Ok(BenchCase { activation, block })
}

/// Canonical planted-outlier case with a Pre-LN MHA block (the attention
/// objective setting).
pub fn planted_mha_case(seed: u64) -> Result<BenchCase> {
    let spec = SyntheticSpec::asymmetric_outliers(BENCH_ROWS, BENCH_WIDTH, seed);
    let activation = generate_synthetic(&spec)?;
    let mut rng = Rng::new(seed ^ 0xA77E_0000);
    let ln = gamma_correlated_ln(&activation)?;
    let block = BlockGraph::pre_ln_mha(
        ln,
        random_layer(&mut rng, BENCH_WIDTH, BENCH_WIDTH, BENCH_WEIGHT_SIGMA),
        random_layer(&mut rng, BENCH_WIDTH, BENCH_WIDTH, BENCH_WEIGHT_SIGMA),
        random_layer(&mut rng, BENCH_WIDTH, BENCH_WIDTH, BENCH_WEIGHT_SIGMA),
        random_layer(&mut rng, BENCH_WIDTH, BENCH_WIDTH, BENCH_WEIGHT_SIGMA),
        BENCH_HEAD_DIM,
        false,
    )?;
    Ok(BenchCase { activation, block })
}

/// A block whose LayerNorm affine parameters plant outlier channels into its
/// own LayerNorm output, driven by a benign input. Pairs with
/// [`benign_input`] for end-to-end quantized-forward comparisons.
pub fn planted_outlier_block(seed: u64) -> Result<BlockGraph> {
    let mut rng = Rng::new(seed ^ 0x0B5E_55ED);
    let width = BENCH_WIDTH;
    let mut gamma: Vec<f64> = (0..width).map(|_| rng.uniform_in(0.5, 1.2)).collect();
    let mut beta: Vec<f64> = (0..width).map(|_| rng.uniform_in(-0.3, 0.3)).collect();
    let outliers = rng.distinct_indices(width, 2);
    // one hard-negative channel, one hard-positive, like the canonical data
    gamma[outliers[0]] = 8.0;
    beta[outliers[0]] = -77.5;
    gamma[outliers[1]] = 8.0;
    beta[outliers[1]] = 24.0;
    let ln = LayerNormParams {
        gamma,
        beta,
        eps: 1e-5,
    };
    BlockGraph::post_ln_ffn(
        ln,
        random_layer(&mut rng, 4 * width, width, BENCH_WEIGHT_SIGMA),
        random_layer(&mut rng, width, 4 * width, BENCH_WEIGHT_SIGMA),
    )
}

/// Benign N(0, 1) input for driving whole blocks.
pub fn benign_input(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = Rng::new(seed ^ 0x1A9B_0000);
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Random block of either main wiring, for equivalence sweeps.
pub fn random_block(rng: &mut Rng, mha: bool, width: usize, head_dim: usize) -> BlockGraph {
    let ln = LayerNormParams {
        gamma: (0..width).map(|_| rng.uniform_in(0.3, 2.0)).collect(),
        beta: (0..width).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        eps: 1e-5,
    };
    if mha {
        BlockGraph::pre_ln_mha(
            ln,
            random_layer(rng, width, width, 0.1),
            random_layer(rng, width, width, 0.1),
            random_layer(rng, width, width, 0.1),
            random_layer(rng, width, width, 0.1),
            head_dim,
            rng.below(2) == 0,
        )
        .expect("random mha block shapes are consistent")
    } else {
        BlockGraph::post_ln_ffn(
            ln,
            random_layer(rng, 4 * width, width, 0.1),
            random_layer(rng, width, 4 * width, 0.1),
        )
        .expect("random ffn block shapes are consistent")
    }
}

/// Random transform with scales spanning both sides of 1, for universal
/// migration checks.
pub fn random_transform(rng: &mut Rng, n: usize) -> TransformVectors {
    TransformVectors::new(
        (0..n).map(|_| rng.uniform_in(-8.0, 8.0)).collect(),
        (0..n).map(|_| rng.uniform_in(0.4, 12.0)).collect(),
        rng.uniform_in(0.5, 8.0),
    )
    .expect("random transform vectors are valid")
}

/// The q/k/v layers of an MHA block, for building objective structures.
pub fn mha_projections(block: &BlockGraph) -> Option<(&LinearLayer, &LinearLayer, &LinearLayer)> {
    match &block.body {
        BlockBody::Mha { q, k, v, .. } => Some((q, k, v)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ffn_case_is_deterministic_and_shaped() {
        let a = planted_ffn_case(20240001).unwrap();
        let b = planted_ffn_case(20240001).unwrap();
        assert_eq!(a.activation, b.activation);
        assert_eq!(a.block, b.block);
        let (lo, hi) = a.activation.value_range().unwrap();
        assert!(lo < -80.0 && hi > 30.0, "profile ({lo}, {hi})");
    }

    #[test]
    fn planted_block_produces_outlier_ln_output() {
        let block = planted_outlier_block(20240001).unwrap();
        let x = benign_input(20240001, 32, BENCH_WIDTH);
        let a =
            crate::tensor::layernorm(&x, &block.ln.gamma, &block.ln.beta, block.ln.eps).unwrap();
        let (lo, hi) = a.value_range().unwrap();
        assert!(lo < -50.0, "expected hard negative channel, min {lo}");
        assert!(hi > 15.0, "expected hard positive channel, max {hi}");
    }
}
