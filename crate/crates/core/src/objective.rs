//! Output-change objectives and the outlier-threshold grid search.
//!
//! A candidate transform is judged by how much the quantized, migrated
//! module output deviates from the original floating-point output on the
//! calibration batch — not by the quantization error of any single tensor.
//! For a lone linear layer the objective compares `Q(x̃) · Q(W̃)ᵀ + b̃`
//! against `x · Wᵀ + b`; for an attention structure the three projections
//! are folded through the softmax so their errors combine the way the block
//! actually combines them.
//!
//! The search collapses the per-channel scale problem to one variable: an
//! outlier threshold `t`. For each grid candidate the scale vector follows
//! from [`compute_scale`], quantization parameters are recalibrated on the
//! transformed tensors, and the objective is evaluated; the best `t` wins,
//! ties broken toward the smallest (strongest suppression). Candidate
//! evaluations are independent and run on rayon under the `parallel`
//! feature.

use crate::error::{Error, Result};
use crate::quant::{
    calibrate_minmax, calibrate_omse, calibrate_percentile, fake_quant, quant_mse_minmax,
    quantize_minmax, QuantSpec,
};
use crate::tensor::{matmul, mean_sq_diff, output_change, Matrix};
use crate::transform::{
    apply_transform, compute_scale, migrate_linear, post_shift_peaks, LinearLayer, TransformVectors,
};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Structure the objective is evaluated against.
#[derive(Debug, Clone, Copy)]
pub enum Structure<'a> {
    /// One linear layer consumes the activation.
    SingleLinear(&'a LinearLayer),
    /// Attention: q/k/v projections share the activation and the scale
    /// vector; the attention map post-processes their quantization error.
    Attention {
        q: &'a LinearLayer,
        k: &'a LinearLayer,
        v: &'a LinearLayer,
        head_dim: usize,
        causal: bool,
    },
    /// Ablation: sum of per-layer objectives over q/k/v, no attention
    /// post-process.
    AttentionSumLoss {
        q: &'a LinearLayer,
        k: &'a LinearLayer,
        v: &'a LinearLayer,
    },
}

/// Threshold grid plus the quantization specs the objective uses.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Candidate thresholds, strictly increasing, all positive.
    pub grid: Vec<f64>,
    /// Append a candidate equal to the largest post-shift channel peak,
    /// which makes the scale vector all ones.
    pub include_identity: bool,
    pub act_spec: QuantSpec,
    pub wgt_spec: QuantSpec,
}

impl SearchConfig {
    /// Default grid: 32 candidates log-spaced between peak/50 and peak,
    /// where peak is the largest post-shift channel magnitude, plus the
    /// identity candidate.
    pub fn default_for(
        x_calib: &Matrix,
        shift: &[f64],
        act_spec: QuantSpec,
        wgt_spec: QuantSpec,
    ) -> Self {
        let peak = post_shift_peaks(x_calib, shift)
            .into_iter()
            .fold(0.0f64, f64::max);
        let hi = if peak > 0.0 { peak } else { 1.0 };
        SearchConfig {
            grid: log_grid(hi / 50.0, hi, 32),
            include_identity: true,
            act_spec,
            wgt_spec,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Parameter("threshold grid is empty".into()));
        }
        for w in self.grid.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Parameter(format!(
                    "threshold grid must be strictly increasing, saw {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self.grid[0] <= 0.0 || !self.grid.iter().all(|t| t.is_finite()) {
            return Err(Error::Parameter(
                "threshold candidates must be positive finite reals".into(),
            ));
        }
        Ok(())
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Search outcome: the winning threshold, its objective, and the full
/// (threshold, objective) trace in evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveResult {
    pub threshold: f64,
    pub objective: f64,
    pub trace: Vec<(f64, f64)>,
}

/// Everything the analysis reports want from one structure evaluation.
#[derive(Debug, Clone)]
pub struct StructureEval {
    /// Mean over calibration rows of the squared output difference.
    pub output_change: f64,
    /// Range of the transformed activation.
    pub act_range: (f64, f64),
    /// Mean squared fake-quantization error of the transformed activation.
    pub act_mse: f64,
    /// Range pooled over all migrated weight tensors.
    pub wgt_range: (f64, f64),
    /// Mean squared fake-quantization error pooled over migrated weights.
    pub wgt_mse: f64,
}

/// How activation quantization parameters are chosen inside an evaluation.
/// Weight parameters are always min-max on the migrated weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Calibrator {
    MinMax,
    Percentile(f64),
    Omse(usize),
}

impl Calibrator {
    fn quantize(&self, x: &Matrix, spec: &QuantSpec) -> Result<Matrix> {
        if spec.is_identity() {
            return Ok(x.clone());
        }
        let params = match *self {
            Calibrator::MinMax => calibrate_minmax(x, spec)?,
            Calibrator::Percentile(q) => calibrate_percentile(x, spec, q)?,
            Calibrator::Omse(n) => calibrate_omse(x, spec, n)?,
        };
        fake_quant(x, &params, spec)
    }
}

fn quantized_linear_path(
    x_t: &Matrix,
    migrated: &LinearLayer,
    act_cal: Calibrator,
    act_spec: &QuantSpec,
    wgt_spec: &QuantSpec,
) -> Result<Matrix> {
    let xq = act_cal.quantize(x_t, act_spec)?;
    let wq = quantize_minmax(&migrated.weight, wgt_spec)?;
    let mut y = matmul(&xq, &wq)?;
    for r in 0..y.rows() {
        for c in 0..y.cols() {
            y.set(r, c, y.get(r, c) + migrated.bias[c]);
        }
    }
    Ok(y)
}

fn pool_range(acc: Option<(f64, f64)>, m: &Matrix) -> Option<(f64, f64)> {
    let (lo, hi) = m.value_range()?;
    Some(match acc {
        Some((alo, ahi)) => (alo.min(lo), ahi.max(hi)),
        None => (lo, hi),
    })
}

/// Evaluates a transform against a structure: quantizes the transformed
/// activation and migrated weights (min-max), runs the quantized path, and
/// measures the output change against the floating-point original, plus the
/// per-tensor statistics the reports show.
pub fn evaluate_structure(
    x_calib: &Matrix,
    structure: &Structure<'_>,
    tv: &TransformVectors,
    act_spec: &QuantSpec,
    wgt_spec: &QuantSpec,
) -> Result<StructureEval> {
    evaluate_structure_with(
        x_calib,
        structure,
        tv,
        Calibrator::MinMax,
        act_spec,
        wgt_spec,
    )
}

/// [`evaluate_structure`] with an explicit activation calibrator, for the
/// baselines that clip ranges instead of (or in addition to) transforming.
pub fn evaluate_structure_with(
    x_calib: &Matrix,
    structure: &Structure<'_>,
    tv: &TransformVectors,
    act_cal: Calibrator,
    act_spec: &QuantSpec,
    wgt_spec: &QuantSpec,
) -> Result<StructureEval> {
    let x_t = apply_transform(x_calib, tv)?;
    let act_range = x_t.value_range().unwrap_or((0.0, 0.0));
    let act_mse = mean_sq_diff(&act_cal.quantize(&x_t, act_spec)?, &x_t);

    let (output_change, wgt_range, wgt_mse) = match structure {
        Structure::SingleLinear(layer) => {
            let migrated = migrate_linear(layer, tv)?;
            let quant = quantized_linear_path(&x_t, &migrated, act_cal, act_spec, wgt_spec)?;
            let fp = layer.forward(x_calib)?;
            let range = pool_range(None, &migrated.weight).unwrap_or((0.0, 0.0));
            let mse = quant_mse_minmax(&migrated.weight, wgt_spec)?;
            (output_change(&quant, &fp), range, mse)
        }
        Structure::Attention {
            q,
            k,
            v,
            head_dim,
            causal,
        } => {
            let (mq, mk, mv) = (
                migrate_linear(q, tv)?,
                migrate_linear(k, tv)?,
                migrate_linear(v, tv)?,
            );
            let quant = crate::blocks::multi_head_attention(
                &quantized_linear_path(&x_t, &mq, act_cal, act_spec, wgt_spec)?,
                &quantized_linear_path(&x_t, &mk, act_cal, act_spec, wgt_spec)?,
                &quantized_linear_path(&x_t, &mv, act_cal, act_spec, wgt_spec)?,
                *head_dim,
                *causal,
            )?;
            let fp = crate::blocks::multi_head_attention(
                &q.forward(x_calib)?,
                &k.forward(x_calib)?,
                &v.forward(x_calib)?,
                *head_dim,
                *causal,
            )?;
            let mut range = None;
            let mut mse_sum = 0.0;
            let mut elems = 0usize;
            for w in [&mq, &mk, &mv] {
                range = pool_range(range, &w.weight);
                let n = w.weight.rows() * w.weight.cols();
                mse_sum += quant_mse_minmax(&w.weight, wgt_spec)? * n as f64;
                elems += n;
            }
            (
                output_change(&quant, &fp),
                range.unwrap_or((0.0, 0.0)),
                mse_sum / elems.max(1) as f64,
            )
        }
        Structure::AttentionSumLoss { q, k, v } => {
            let mut total = 0.0;
            let mut range = None;
            let mut mse_sum = 0.0;
            let mut elems = 0usize;
            for layer in [q, k, v] {
                let migrated = migrate_linear(layer, tv)?;
                let quant = quantized_linear_path(&x_t, &migrated, act_cal, act_spec, wgt_spec)?;
                let fp = layer.forward(x_calib)?;
                total += output_change(&quant, &fp);
                range = pool_range(range, &migrated.weight);
                let n = migrated.weight.rows() * migrated.weight.cols();
                mse_sum += quant_mse_minmax(&migrated.weight, wgt_spec)? * n as f64;
                elems += n;
            }
            (
                total,
                range.unwrap_or((0.0, 0.0)),
                mse_sum / elems.max(1) as f64,
            )
        }
    };

    Ok(StructureEval {
        output_change,
        act_range,
        act_mse,
        wgt_range,
        wgt_mse,
    })
}

/// Output-change objective for a single linear layer.
pub fn objective_linear(
    x_calib: &Matrix,
    layer: &LinearLayer,
    tv: &TransformVectors,
    act_spec: &QuantSpec,
    wgt_spec: &QuantSpec,
) -> Result<f64> {
    Ok(evaluate_structure(
        x_calib,
        &Structure::SingleLinear(layer),
        tv,
        act_spec,
        wgt_spec,
    )?
    .output_change)
}

/// Output-change objective for an attention structure: quantized
/// `softmax(Q̃ K̃ᵀ / sqrt(head_dim)) Ṽ` against the floating-point
/// equivalent.
#[allow(clippy::too_many_arguments)]
pub fn objective_attention(
    x_calib: &Matrix,
    q: &LinearLayer,
    k: &LinearLayer,
    v: &LinearLayer,
    tv: &TransformVectors,
    act_spec: &QuantSpec,
    wgt_spec: &QuantSpec,
    head_dim: usize,
    causal: bool,
) -> Result<f64> {
    Ok(evaluate_structure(
        x_calib,
        &Structure::Attention {
            q,
            k,
            v,
            head_dim,
            causal,
        },
        tv,
        act_spec,
        wgt_spec,
    )?
    .output_change)
}

/// Ablation objective: per-layer output changes of q/k/v summed, skipping
/// the attention post-process.
pub fn objective_attention_sumloss(
    x_calib: &Matrix,
    q: &LinearLayer,
    k: &LinearLayer,
    v: &LinearLayer,
    tv: &TransformVectors,
    act_spec: &QuantSpec,
    wgt_spec: &QuantSpec,
) -> Result<f64> {
    Ok(evaluate_structure(
        x_calib,
        &Structure::AttentionSumLoss { q, k, v },
        tv,
        act_spec,
        wgt_spec,
    )?
    .output_change)
}

fn candidate_list(x_calib: &Matrix, shift: &[f64], config: &SearchConfig) -> Vec<f64> {
    let mut candidates = config.grid.clone();
    if config.include_identity {
        let peak = post_shift_peaks(x_calib, shift)
            .into_iter()
            .fold(0.0f64, f64::max);
        candidates.push(if peak > 0.0 { peak } else { 1.0 });
    }
    candidates
}

fn evaluate_candidate(
    x_calib: &Matrix,
    structure: &Structure<'_>,
    shift: &[f64],
    t: f64,
    config: &SearchConfig,
) -> Result<(f64, f64)> {
    let scale = compute_scale(x_calib, shift, t)?;
    let tv = TransformVectors::new(shift.to_vec(), scale, t)?;
    let eval = evaluate_structure(x_calib, structure, &tv, &config.act_spec, &config.wgt_spec)?;
    Ok((t, eval.output_change))
}

/// Grid search over the outlier threshold. For each candidate `t` the scale
/// vector is recomputed, quantization parameters are recalibrated, and the
/// structure objective is evaluated; returns the argmin with the full trace.
/// Ties break toward the smallest threshold. Deterministic for fixed inputs.
pub fn grid_search_threshold(
    x_calib: &Matrix,
    structure: &Structure<'_>,
    shift: &[f64],
    config: &SearchConfig,
) -> Result<ObjectiveResult> {
    config.validate()?;
    if shift.len() != x_calib.cols() {
        return Err(Error::Dimension(format!(
            "shift has {} entries but tensor has {} channels",
            shift.len(),
            x_calib.cols()
        )));
    }
    let candidates = candidate_list(x_calib, shift, config);

    #[cfg(feature = "parallel")]
    let trace: Vec<(f64, f64)> = candidates
        .par_iter()
        .map(|&t| evaluate_candidate(x_calib, structure, shift, t, config))
        .collect::<Result<Vec<_>>>()?;

    #[cfg(not(feature = "parallel"))]
    let trace: Vec<(f64, f64)> = candidates
        .iter()
        .map(|&t| evaluate_candidate(x_calib, structure, shift, t, config))
        .collect::<Result<Vec<_>>>()?;

    pick_argmin(trace)
}

/// Sequential twin of [`grid_search_threshold`], kept callable regardless of
/// the `parallel` feature so the bench suite can compare both.
pub fn grid_search_threshold_serial(
    x_calib: &Matrix,
    structure: &Structure<'_>,
    shift: &[f64],
    config: &SearchConfig,
) -> Result<ObjectiveResult> {
    config.validate()?;
    if shift.len() != x_calib.cols() {
        return Err(Error::Dimension(format!(
            "shift has {} entries but tensor has {} channels",
            shift.len(),
            x_calib.cols()
        )));
    }
    let trace: Vec<(f64, f64)> = candidate_list(x_calib, shift, config)
        .iter()
        .map(|&t| evaluate_candidate(x_calib, structure, shift, t, config))
        .collect::<Result<Vec<_>>>()?;
    pick_argmin(trace)
}

fn pick_argmin(trace: Vec<(f64, f64)>) -> Result<ObjectiveResult> {
    let mut best: Option<(f64, f64)> = None;
    for &(t, obj) in &trace {
        best = Some(match best {
            None => (t, obj),
            Some((bt, bobj)) => {
                if obj < bobj || (obj == bobj && t < bt) {
                    (t, obj)
                } else {
                    (bt, bobj)
                }
            }
        });
    }
    let (threshold, objective) =
        best.ok_or_else(|| Error::Parameter("threshold grid is empty".into()))?;
    Ok(ObjectiveResult {
        threshold,
        objective,
        trace,
    })
}
