//! The command pipeline: analyze, suppress, compare, and eval as library
//! calls, plus the method registry and the key=value run configuration.
//!
//! Commands take in-memory inputs and return [`Report`]s so they stay
//! deterministic and testable; the CLI wraps them with file loading and
//! output writing. Method evaluations inside a comparison are independent
//! and run on rayon under the `parallel` feature; the assembled report is
//! ordered by method name either way.

use std::collections::BTreeMap;

use crate::benchmark;
use crate::blocks::{
    body_weights, capture_activations, forward_fp, fuse_block, weight_node_names, BlockBody,
    BlockGraph, QuantizedBlock,
};
use crate::error::{Error, Result};
use crate::objective::{
    grid_search_threshold, Calibrator, ObjectiveResult, SearchConfig, Structure, StructureEval,
};
use crate::quant::{quant_mse_minmax, Axis, Granularity, QuantSpec};
use crate::report::{trace_csv, Report};
use crate::tensor::{channel_stats, output_change, Matrix};
use crate::transform::{
    apply_transform, compute_scale, compute_shift, post_shift_peaks, LinearLayer, TransformVectors,
};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Percentile candidates the percentile baseline sweeps.
pub const PERCENTILE_CANDIDATES: [f64; 3] = [0.999, 0.9999, 0.99999];
/// Alpha candidates the range-equalization baseline sweeps.
pub const ALPHA_CANDIDATES: [f64; 7] = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
/// Grid resolution of the MSE-optimal range calibrator.
pub const OMSE_GRID_POINTS: usize = 100;

/// Calibration method under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    /// Raw min-max calibration, no transform — the "original" row.
    MinMax,
    /// Percentile range clipping, best of the swept candidates.
    Percentile,
    /// MSE-optimal range search on the activation.
    Omse,
    /// Range equalization between activation and weights with a swept alpha
    /// exponent, migrated like any other scale vector.
    SmoothQuantAlpha,
    /// The LayerNorm gamma vector migrated as the scale, no shift.
    FixedGamma,
    /// Channel-wise shift plus threshold-searched scale, migrated.
    OsPlus,
    /// Ablation: scale search without the shift.
    OsPlusNoShift,
    /// Ablation: shift without scaling.
    OsPlusNoScale,
    /// Ablation: attention structures search with summed per-layer losses
    /// instead of the attention post-process.
    OsPlusSumLoss,
}

pub const ALL_METHODS: [Method; 9] = [
    Method::MinMax,
    Method::Percentile,
    Method::Omse,
    Method::SmoothQuantAlpha,
    Method::FixedGamma,
    Method::OsPlus,
    Method::OsPlusNoShift,
    Method::OsPlusNoScale,
    Method::OsPlusSumLoss,
];

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::MinMax => "minmax",
            Method::Percentile => "percentile",
            Method::Omse => "omse",
            Method::SmoothQuantAlpha => "smoothquant_alpha",
            Method::FixedGamma => "fixed_gamma",
            Method::OsPlus => "osplus",
            Method::OsPlusNoShift => "osplus_noshift",
            Method::OsPlusNoScale => "osplus_noscale",
            Method::OsPlusSumLoss => "osplus_sumloss",
        }
    }

    /// Whether the method produces a (non-identity) transform to fuse.
    pub fn has_transform(&self) -> bool {
        !matches!(self, Method::MinMax | Method::Percentile | Method::Omse)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_METHODS
            .iter()
            .find(|m| m.name() == s)
            .copied()
            .ok_or_else(|| {
                let valid: Vec<&str> = ALL_METHODS.iter().map(|m| m.name()).collect();
                Error::Config(format!(
                    "unknown method {s:?}; valid methods: {}",
                    valid.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The objective structure a block exposes for transform search and
/// comparison: the up projection for an FFN, the q/k/v triple for attention.
fn block_structure<'a>(block: &'a BlockGraph, sum_loss: bool) -> Structure<'a> {
    match &block.body {
        BlockBody::Mha {
            q,
            k,
            v,
            head_dim,
            causal,
            ..
        } => {
            if sum_loss {
                Structure::AttentionSumLoss { q, k, v }
            } else {
                Structure::Attention {
                    q,
                    k,
                    v,
                    head_dim: *head_dim,
                    causal: *causal,
                }
            }
        }
        BlockBody::Ffn { up, .. } => Structure::SingleLinear(up),
        BlockBody::LinearChain { layers } => Structure::SingleLinear(&layers[0]),
    }
}

fn identity_tv_for(activation: &Matrix) -> Result<TransformVectors> {
    let n = activation.cols();
    let peak = activation
        .data()
        .iter()
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    TransformVectors::new(
        vec![0.0; n],
        vec![1.0; n],
        if peak > 0.0 { peak } else { 1.0 },
    )
}

/// Absolute column maxima pooled over the structure's weights that share the
/// activation's channels.
fn pooled_weight_absmax(structure: &Structure<'_>, n: usize) -> Vec<f64> {
    let layers: Vec<&LinearLayer> = match structure {
        Structure::SingleLinear(l) => vec![l],
        Structure::Attention { q, k, v, .. } | Structure::AttentionSumLoss { q, k, v } => {
            vec![q, k, v]
        }
    };
    let mut absmax = vec![0.0f64; n];
    for layer in layers {
        let w = &layer.weight;
        for r in 0..w.rows() {
            for (c, slot) in absmax.iter_mut().enumerate() {
                *slot = slot.max(w.get(r, c).abs());
            }
        }
    }
    absmax
}

/// Range-equalizing scale vector: `s_j = act_absmax_j^alpha /
/// wgt_absmax_j^(1-alpha)`, clamped to [1e-5, 1e5].
fn equalization_scales(act_absmax: &[f64], wgt_absmax: &[f64], alpha: f64) -> Vec<f64> {
    act_absmax
        .iter()
        .zip(wgt_absmax)
        .map(|(&a, &w)| {
            let s = a.max(1e-8).powf(alpha) / w.max(1e-8).powf(1.0 - alpha);
            s.clamp(1e-5, 1e5)
        })
        .collect()
}

/// Threshold that makes the transformed activation bound explicit for
/// transforms not derived from a threshold search.
fn bounding_threshold(activation: &Matrix, shift: &[f64], scale: &[f64]) -> f64 {
    let peaks = post_shift_peaks(activation, shift);
    let bound = peaks
        .iter()
        .zip(scale)
        .map(|(&p, &s)| p / s)
        .fold(0.0f64, f64::max);
    if bound > 0.0 {
        bound
    } else {
        1.0
    }
}

/// Everything one method contributes to a comparison report.
#[derive(Debug, Clone)]
pub struct MethodRecord {
    pub method: Method,
    pub transform: TransformVectors,
    pub eval: StructureEval,
    /// Swept (candidate, objective) pairs: thresholds for the search
    /// methods, alpha for equalization, q for percentile.
    pub trace: Vec<(f64, f64)>,
    /// Name and value of the swept parameter the method settled on.
    pub chosen: Option<(&'static str, f64)>,
    /// Activation calibrator the method quantizes with.
    pub calibrator: Calibrator,
}

/// A derived transform, its sweep trace, and the swept parameter it settled
/// on (name, value).
pub type TransformDerivation = (
    TransformVectors,
    Vec<(f64, f64)>,
    Option<(&'static str, f64)>,
);

/// Derives a method's transform (and sweep trace) on the given activation
/// and block.
pub fn method_transform(
    activation: &Matrix,
    block: &BlockGraph,
    method: Method,
    act_spec: &QuantSpec,
    wgt_spec: &QuantSpec,
    grid_points: usize,
) -> Result<TransformDerivation> {
    let n = activation.cols();
    match method {
        Method::MinMax | Method::Percentile | Method::Omse => {
            Ok((identity_tv_for(activation)?, Vec::new(), None))
        }
        Method::FixedGamma => {
            if block.ln.gamma.len() != n {
                return Err(Error::Dimension(format!(
                    "gamma has {} entries but activation has {n} channels",
                    block.ln.gamma.len()
                )));
            }
            let scale: Vec<f64> = block.ln.gamma.iter().map(|g| g.abs().max(1e-5)).collect();
            let shift = vec![0.0; n];
            let t = bounding_threshold(activation, &shift, &scale);
            Ok((TransformVectors::new(shift, scale, t)?, Vec::new(), None))
        }
        Method::SmoothQuantAlpha => {
            let structure = block_structure(block, false);
            let act_absmax = post_shift_peaks(activation, &vec![0.0; n]);
            let wgt_absmax = pooled_weight_absmax(&structure, n);
            let mut trace = Vec::new();
            let mut best: Option<(f64, TransformVectors, f64)> = None;
            for &alpha in ALPHA_CANDIDATES.iter() {
                let scale = equalization_scales(&act_absmax, &wgt_absmax, alpha);
                let shift = vec![0.0; n];
                let t = bounding_threshold(activation, &shift, &scale);
                let tv = TransformVectors::new(shift, scale, t)?;
                let eval = crate::objective::evaluate_structure(
                    activation, &structure, &tv, act_spec, wgt_spec,
                )?;
                trace.push((alpha, eval.output_change));
                let better = match &best {
                    None => true,
                    Some((_, _, obj)) => eval.output_change < *obj,
                };
                if better {
                    best = Some((alpha, tv, eval.output_change));
                }
            }
            let (alpha, tv, _) = best.expect("alpha sweep is nonempty");
            Ok((tv, trace, Some(("alpha", alpha))))
        }
        Method::OsPlusNoScale => {
            let shift = compute_shift(activation)?;
            let t = bounding_threshold(activation, &shift, &vec![1.0; n]);
            Ok((
                TransformVectors::new(shift, vec![1.0; n], t)?,
                Vec::new(),
                None,
            ))
        }
        Method::OsPlus | Method::OsPlusNoShift | Method::OsPlusSumLoss => {
            let shift = if method == Method::OsPlusNoShift {
                vec![0.0; n]
            } else {
                compute_shift(activation)?
            };
            let structure = block_structure(block, method == Method::OsPlusSumLoss);
            let mut config = SearchConfig::default_for(activation, &shift, *act_spec, *wgt_spec);
            if grid_points >= 2 && grid_points != config.grid.len() {
                let lo = config.grid[0];
                let hi = *config.grid.last().unwrap();
                config.grid = crate::objective::log_grid(lo, hi, grid_points);
            }
            let result: ObjectiveResult =
                grid_search_threshold(activation, &structure, &shift, &config)?;
            let scale = compute_scale(activation, &shift, result.threshold)?;
            let tv = TransformVectors::new(shift, scale, result.threshold)?;
            Ok((tv, result.trace, Some(("t", result.threshold))))
        }
    }
}

/// Evaluates one method end to end on (activation, block).
pub fn evaluate_method(
    activation: &Matrix,
    block: &BlockGraph,
    method: Method,
    act_spec: &QuantSpec,
    wgt_spec: &QuantSpec,
    grid_points: usize,
) -> Result<MethodRecord> {
    let (transform, trace, chosen) =
        method_transform(activation, block, method, act_spec, wgt_spec, grid_points)?;
    let calibrator = match method {
        Method::Percentile => {
            // sweep the documented candidates, keep the best on the
            // calibration data
            let structure = block_structure(block, false);
            let mut best = (PERCENTILE_CANDIDATES[0], f64::INFINITY);
            for &q in PERCENTILE_CANDIDATES.iter() {
                let eval = crate::objective::evaluate_structure_with(
                    activation,
                    &structure,
                    &transform,
                    Calibrator::Percentile(q),
                    act_spec,
                    wgt_spec,
                )?;
                if eval.output_change < best.1 {
                    best = (q, eval.output_change);
                }
            }
            Calibrator::Percentile(best.0)
        }
        Method::Omse => Calibrator::Omse(OMSE_GRID_POINTS),
        _ => Calibrator::MinMax,
    };
    let structure = block_structure(block, false);
    let eval = crate::objective::evaluate_structure_with(
        activation, &structure, &transform, calibrator, act_spec, wgt_spec,
    )?;
    let mut record = MethodRecord {
        method,
        transform,
        eval,
        trace,
        chosen,
        calibrator,
    };
    if let Calibrator::Percentile(q) = calibrator {
        record.chosen = Some(("q", q));
        record.trace = PERCENTILE_CANDIDATES
            .iter()
            .map(|&q| {
                crate::objective::evaluate_structure_with(
                    activation,
                    &structure,
                    &record.transform,
                    Calibrator::Percentile(q),
                    act_spec,
                    wgt_spec,
                )
                .map(|e| (q, e.output_change))
            })
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(record)
}

// ---------------------------------------------------------------------------
// Run configuration.

/// Keys every command accepts in config files and as flags.
pub const VALID_KEYS: [&str; 13] = [
    "input",
    "block",
    "out",
    "seed",
    "bits",
    "act_granularity",
    "wgt_granularity",
    "method",
    "methods",
    "grid_points",
    "top_k",
    "rows",
    "cols",
];

/// Flat key=value run configuration, merged from a config file and flags
/// (flags win). Unknown keys are rejected up front; the full resolved map is
/// echoed into every report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig::default()
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {} missing '=': {raw:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !VALID_KEYS.contains(&key) {
            return Err(Error::Config(format!(
                "unknown config key {key:?}; valid keys: {}",
                VALID_KEYS.join(", ")
            )));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    /// Overlays `other` on top of `self` (other wins).
    pub fn merged_with(&self, other: &RunConfig) -> RunConfig {
        let mut entries = self.entries.clone();
        for (k, v) in &other.entries {
            entries.insert(k.clone(), v.clone());
        }
        RunConfig { entries }
    }

    fn parse_field<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                Error::Config(format!("config key {key} has unparseable value {raw:?}"))
            }),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse_field("seed", 20240001)
    }

    pub fn bits(&self) -> Result<u8> {
        let bits: u8 = self.parse_field("bits", 6)?;
        if !matches!(bits, 4 | 6 | 8) {
            return Err(Error::Config(format!(
                "bits must be 4, 6, or 8, got {bits}"
            )));
        }
        Ok(bits)
    }

    pub fn grid_points(&self) -> Result<usize> {
        let n: usize = self.parse_field("grid_points", 32)?;
        if n < 2 {
            return Err(Error::Config("grid_points must be at least 2".into()));
        }
        Ok(n)
    }

    pub fn top_k(&self) -> Result<usize> {
        self.parse_field("top_k", 8)
    }

    pub fn rows(&self) -> Result<usize> {
        self.parse_field("rows", 32)
    }

    pub fn cols(&self) -> Result<usize> {
        self.parse_field("cols", 64)
    }

    pub fn act_spec(&self) -> Result<QuantSpec> {
        let bits = self.bits()?;
        match self.get("act_granularity").unwrap_or("tensor") {
            "tensor" => Ok(QuantSpec::act_per_tensor(bits)),
            "token" => Ok(QuantSpec::act_per_token(bits)),
            other => Err(Error::Config(format!(
                "act_granularity must be tensor or token, got {other:?}"
            ))),
        }
    }

    pub fn wgt_spec(&self) -> Result<QuantSpec> {
        let bits = self.bits()?;
        let raw = self.get("wgt_granularity").unwrap_or("channel");
        if let Some(group) = raw.strip_prefix("group:") {
            let size: usize = group.parse().map_err(|_| {
                Error::Config(format!(
                    "group size in wgt_granularity {raw:?} is not a count"
                ))
            })?;
            if size == 0 {
                return Err(Error::Config("group size must be at least 1".into()));
            }
            return Ok(QuantSpec::wgt_per_group(bits, size));
        }
        match raw {
            "tensor" => Ok(QuantSpec::wgt_per_tensor(bits)),
            "channel" => Ok(QuantSpec::wgt_per_channel(bits)),
            other => Err(Error::Config(format!(
                "wgt_granularity must be tensor, channel, or group:N, got {other:?}"
            ))),
        }
    }

    pub fn method(&self) -> Result<Method> {
        self.get("method").unwrap_or("osplus").parse()
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        let raw = self
            .get("methods")
            .unwrap_or("minmax,smoothquant_alpha,fixed_gamma,osplus");
        let mut methods = Vec::new();
        for name in raw.split(',') {
            let name = name.trim();
            if name.is_empty() {
                continue;
            }
            methods.push(name.parse::<Method>()?);
        }
        if methods.is_empty() {
            return Err(Error::Config("methods list is empty".into()));
        }
        methods.sort();
        methods.dedup();
        Ok(methods)
    }

    /// Stamps the resolved configuration and its hash into a report.
    pub fn echo_into(&self, report: &mut Report) {
        let mut config_text = String::new();
        for (k, v) in &self.entries {
            report.set_str(&format!("config.{k}"), v);
            config_text.push_str(&format!("{k}={v}\n"));
        }
        report.set_str("config_hash", &Report::fnv1a_hex(&config_text));
    }
}

fn spec_summary(spec: &QuantSpec) -> String {
    if spec.is_identity() {
        return "identity".into();
    }
    let axis = match spec.channel_axis {
        Axis::Rows => "rows",
        Axis::Cols => "cols",
    };
    let sym = if spec.symmetric { "sym" } else { "asym" };
    let gran = match spec.granularity {
        Granularity::PerGroup { group_size } => format!("group:{group_size}"),
        g => g.to_string(),
    };
    format!("{}b/{gran}/{sym}/{axis}", spec.bits)
}

// ---------------------------------------------------------------------------
// Commands.

/// Per-channel distribution analysis: min/max/center/half-range per channel,
/// whole-tensor range, and the channels flagged as asymmetric outliers
/// (score = |center| + half_range above four times the median score).
pub fn analyze(input: &Matrix, input_name: &str, config: &RunConfig) -> Result<Report> {
    let mut report = Report::new();
    config.echo_into(&mut report);
    report.set_str("command", "analyze");
    report.set_str("input.name", input_name);
    report.set_usize("input.rows", input.rows());
    report.set_usize("input.cols", input.cols());

    let stats = channel_stats(input)?;
    let (lo, hi) = input.value_range().unwrap_or((0.0, 0.0));
    report.set_f64("tensor.range_lo", lo);
    report.set_f64("tensor.range_hi", hi);

    let mut scores: Vec<(usize, f64)> = Vec::with_capacity(stats.len());
    for (j, &(clo, chi)) in stats.iter().enumerate() {
        let center = (clo + chi) / 2.0;
        let half = (chi - clo) / 2.0;
        report.set_f64(&format!("channel.{j:04}.min"), clo);
        report.set_f64(&format!("channel.{j:04}.max"), chi);
        report.set_f64(&format!("channel.{j:04}.center"), center);
        report.set_f64(&format!("channel.{j:04}.half_range"), half);
        scores.push((j, center.abs() + half));
    }

    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let median = sorted[sorted.len() / 2].1;
    let flagged: Vec<usize> = scores
        .iter()
        .filter(|&&(_, s)| s > 4.0 * median && s > 0.0)
        .map(|&(j, _)| j)
        .collect();
    report.set_usize("outliers.count", flagged.len());
    report.set_str(
        "outliers.channels",
        &flagged
            .iter()
            .map(|j| j.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    for &(j, _) in &scores {
        report.set_bool(&format!("channel.{j:04}.flagged"), flagged.contains(&j));
    }

    // top-k channels by score, ties toward the lower index
    let mut ranked = scores;
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let k = config.top_k()?.min(ranked.len());
    for (rank, &(j, s)) in ranked[..k].iter().enumerate() {
        report.set_usize(&format!("top.{rank:02}.channel"), j);
        report.set_f64(&format!("top.{rank:02}.score"), s);
    }
    Ok(report)
}

/// Output of the suppression pipeline.
#[derive(Debug, Clone)]
pub struct SuppressOutcome {
    pub transform: TransformVectors,
    pub fused: BlockGraph,
    pub report: Report,
    pub trace: Vec<(f64, f64)>,
}

/// Runs the suppression pipeline: derive the method's transform on the
/// calibration activation, fuse it into the block, and report the trace, the
/// chosen threshold, and the post-transform containment check.
pub fn suppress(
    activation: &Matrix,
    block: &BlockGraph,
    config: &RunConfig,
) -> Result<SuppressOutcome> {
    let method = config.method()?;
    if !method.has_transform() {
        return Err(Error::Config(format!(
            "method {method} does not produce a transform; pick one of: minmax, \
             smoothquant_alpha, fixed_gamma, osplus, osplus_noshift, osplus_noscale, \
             osplus_sumloss"
        )));
    }
    let act_spec = config.act_spec()?;
    let wgt_spec = config.wgt_spec()?;
    let (transform, trace, chosen) = method_transform(
        activation,
        block,
        method,
        &act_spec,
        &wgt_spec,
        config.grid_points()?,
    )?;
    let fused = fuse_block(block, &transform)?;

    let mut report = Report::new();
    config.echo_into(&mut report);
    report.set_str("command", "suppress");
    report.set_str("method", method.name());
    report.set_str("block.kind", &block.kind().to_string());
    report.set_str("spec.act", &spec_summary(&act_spec));
    report.set_str("spec.wgt", &spec_summary(&wgt_spec));
    report.set_transform("transform", &transform);
    if let Some((name, value)) = chosen {
        report.set_f64(&format!("chosen.{name}"), value);
    }
    for (i, &(t, obj)) in trace.iter().enumerate() {
        report.set_f64(&format!("trace.{i:03}.candidate"), t);
        report.set_f64(&format!("trace.{i:03}.objective"), obj);
    }
    report.set_usize("trace.count", trace.len());

    // containment: the transformed calibration batch must sit within the
    // recorded threshold band
    let transformed = apply_transform(activation, &transform)?;
    let max_abs = transformed
        .data()
        .iter()
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    report.set_f64("containment.max_abs", max_abs);
    report.set_f64("containment.threshold", transform.threshold);
    let ok = max_abs <= transform.threshold;
    report.set_bool("containment.ok", ok);
    if !ok {
        return Err(Error::Internal(format!(
            "transformed calibration data escaped the threshold band: {max_abs} > {}",
            transform.threshold
        )));
    }
    report.set_f64(
        "transform.scale_min",
        transform
            .scale
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min),
    );
    report.set_usize("residual.extra_ops", fused.residual_op_count());

    Ok(SuppressOutcome {
        transform,
        fused,
        report,
        trace,
    })
}

/// Compares calibration methods on one (activation, block) pair under
/// identical quantization specs and identical data. Returns the report plus
/// each method's record (for trace CSV emission), ordered by method name.
pub fn compare(
    activation: &Matrix,
    block: &BlockGraph,
    config: &RunConfig,
) -> Result<(Report, Vec<MethodRecord>)> {
    let mut methods = config.methods()?;
    methods.sort_by_key(|m| m.name());
    let act_spec = config.act_spec()?;
    let wgt_spec = config.wgt_spec()?;
    let grid_points = config.grid_points()?;

    #[cfg(feature = "parallel")]
    let records: Vec<MethodRecord> = methods
        .par_iter()
        .map(|&m| evaluate_method(activation, block, m, &act_spec, &wgt_spec, grid_points))
        .collect::<Result<Vec<_>>>()?;

    #[cfg(not(feature = "parallel"))]
    let records: Vec<MethodRecord> = methods
        .iter()
        .map(|&m| evaluate_method(activation, block, m, &act_spec, &wgt_spec, grid_points))
        .collect::<Result<Vec<_>>>()?;

    let mut report = Report::new();
    config.echo_into(&mut report);
    report.set_str("command", "compare");
    report.set_str("block.kind", &block.kind().to_string());
    report.set_str("spec.act", &spec_summary(&act_spec));
    report.set_str("spec.wgt", &spec_summary(&wgt_spec));
    report.set_usize("methods.count", records.len());
    for record in &records {
        let m = record.method.name();
        report.set_f64(
            &format!("method.{m}.output_change_mse"),
            record.eval.output_change,
        );
        report.set_tensor_record(
            &format!("{m}.act"),
            record.eval.act_range,
            record.eval.act_mse,
        );
        report.set_tensor_record(
            &format!("{m}.wgt"),
            record.eval.wgt_range,
            record.eval.wgt_mse,
        );
        if let Some((name, value)) = record.chosen {
            report.set_f64(&format!("method.{m}.chosen.{name}"), value);
        }
        report.set_usize(&format!("method.{m}.trace.count"), record.trace.len());
    }
    Ok((report, records))
}

/// Quantized-vs-floating-point evaluation of a whole block: output-change
/// MSE plus range and fake-quant MSE at every quantization node.
pub fn eval(block: &BlockGraph, input: &Matrix, config: &RunConfig) -> Result<Report> {
    let act_spec = config.act_spec()?;
    let wgt_spec = config.wgt_spec()?;
    let mut qb = QuantizedBlock::new(block.clone(), act_spec, wgt_spec)?;
    qb.calibrate(input)?;
    let quant = qb.forward(input)?;
    let fp = forward_fp(block, input)?;

    let mut report = Report::new();
    config.echo_into(&mut report);
    report.set_str("command", "eval");
    report.set_str("block.kind", &block.kind().to_string());
    report.set_str("spec.act", &spec_summary(&act_spec));
    report.set_str("spec.wgt", &spec_summary(&wgt_spec));
    report.set_f64("output_change_mse", output_change(&quant, &fp));
    report.set_usize("quant_nodes", block.quant_node_count());
    report.set_usize("residual.extra_ops", block.residual_op_count());

    let acts = capture_activations(block, input)?;
    let (act_names, wgt_names) = {
        (
            crate::blocks::activation_node_names(&block.body),
            weight_node_names(&block.body),
        )
    };
    // declare the node placement so compared runs are self-consistent
    report.set_str(
        "quant_nodes.placement",
        &act_names
            .iter()
            .chain(wgt_names.iter())
            .cloned()
            .collect::<Vec<_>>()
            .join(","),
    );
    for (name, tensor) in act_names.iter().zip(&acts) {
        let range = tensor.value_range().unwrap_or((0.0, 0.0));
        report.set_tensor_record(name, range, quant_mse_minmax(tensor, &act_spec)?);
    }
    for (name, layer) in wgt_names.iter().zip(body_weights(&block.body)) {
        let range = layer.weight.value_range().unwrap_or((0.0, 0.0));
        report.set_tensor_record(name, range, quant_mse_minmax(&layer.weight, &wgt_spec)?);
    }
    Ok(report)
}

/// Builds the demo inputs the CLI's generate command writes: the canonical
/// planted-outlier activation and matching FFN block, sized and seeded per
/// config.
pub fn generate_case(config: &RunConfig) -> Result<benchmark::BenchCase> {
    let rows = config.rows()?;
    let cols = config.cols()?;
    let seed = config.seed()?;
    if rows == benchmark::BENCH_ROWS && cols == benchmark::BENCH_WIDTH {
        return benchmark::planted_ffn_case(seed);
    }
    let spec = crate::io::SyntheticSpec::asymmetric_outliers(rows, cols, seed);
    let activation = crate::io::generate_synthetic(&spec)?;
    let ln = benchmark::gamma_correlated_ln(&activation)?;
    let mut rng = crate::rng::Rng::new(seed ^ 0xB10C_F0F0);
    let block = BlockGraph::post_ln_ffn(
        ln,
        benchmark::random_layer(&mut rng, 4 * cols, cols, benchmark::BENCH_WEIGHT_SIGMA),
        benchmark::random_layer(&mut rng, cols, 4 * cols, benchmark::BENCH_WEIGHT_SIGMA),
    )?;
    Ok(benchmark::BenchCase { activation, block })
}

/// Emits a method's sweep trace as CSV.
pub fn record_trace_csv(record: &MethodRecord) -> String {
    trace_csv(&record.trace)
}
