//! Uniform affine fake quantization at per-tensor, per-channel, per-token,
//! and per-group granularity, plus the range calibrators (min-max,
//! percentile, MSE-optimal search) that pick clipping ranges.
//!
//! A [`QuantSpec`] fixes bit-width, granularity, and symmetry; calibration
//! turns a concrete tensor into [`QuantParams`] (one scale/zero-point per
//! slice); [`fake_quant`] simulates quantize-dequantize without integer
//! kernels. Rounding is half-away-from-zero throughout.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Which matrix dimension carries channels for channel-sliced granularities.
/// Weights are stored out-channels x in-channels, so their channel axis is
/// `Rows`; activations are tokens x channels, so theirs is `Cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Granularity at which scale/zero-point are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    /// One parameter set for the whole tensor.
    PerTensor,
    /// One parameter set per index along the spec's channel axis.
    PerChannel,
    /// One parameter set per row (token). Activations only.
    PerToken,
    /// One parameter set per `group_size` consecutive input channels within
    /// each output channel; the final group may be short. Weights only.
    PerGroup { group_size: usize },
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Granularity::PerTensor => write!(f, "tensor"),
            Granularity::PerChannel => write!(f, "channel"),
            Granularity::PerToken => write!(f, "token"),
            Granularity::PerGroup { group_size } => write!(f, "group:{group_size}"),
        }
    }
}

/// Full description of a fake-quantization function. `bits == 0` is the
/// identity spec: calibration yields no slices and `fake_quant` passes the
/// tensor through untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantSpec {
    pub bits: u8,
    pub granularity: Granularity,
    pub symmetric: bool,
    pub channel_axis: Axis,
}

impl QuantSpec {
    /// Asymmetric per-tensor activation quantization (the standard setting).
    pub fn act_per_tensor(bits: u8) -> Self {
        QuantSpec {
            bits,
            granularity: Granularity::PerTensor,
            symmetric: false,
            channel_axis: Axis::Cols,
        }
    }

    /// Asymmetric per-token activation quantization.
    pub fn act_per_token(bits: u8) -> Self {
        QuantSpec {
            bits,
            granularity: Granularity::PerToken,
            symmetric: false,
            channel_axis: Axis::Cols,
        }
    }

    /// Symmetric per-output-channel weight quantization.
    pub fn wgt_per_channel(bits: u8) -> Self {
        QuantSpec {
            bits,
            granularity: Granularity::PerChannel,
            symmetric: true,
            channel_axis: Axis::Rows,
        }
    }

    /// Symmetric per-tensor weight quantization.
    pub fn wgt_per_tensor(bits: u8) -> Self {
        QuantSpec {
            bits,
            granularity: Granularity::PerTensor,
            symmetric: true,
            channel_axis: Axis::Rows,
        }
    }

    /// Symmetric per-group weight quantization along input channels.
    pub fn wgt_per_group(bits: u8, group_size: usize) -> Self {
        QuantSpec {
            bits,
            granularity: Granularity::PerGroup { group_size },
            symmetric: true,
            channel_axis: Axis::Rows,
        }
    }

    /// Pass-through spec: quantization disabled.
    pub fn identity() -> Self {
        QuantSpec {
            bits: 0,
            granularity: Granularity::PerTensor,
            symmetric: true,
            channel_axis: Axis::Cols,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.bits == 0
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.bits, 0 | 4 | 6 | 8) {
            return Err(Error::Parameter(format!(
                "bit-width must be 4, 6, or 8 (0 disables quantization), got {}",
                self.bits
            )));
        }
        if let Granularity::PerGroup { group_size } = self.granularity {
            if group_size == 0 {
                return Err(Error::Parameter("group_size must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Integer lattice bounds: restricted signed range for symmetric specs
    /// (so zero is exact and the scale is sign-symmetric), full unsigned
    /// range for asymmetric ones.
    pub fn lattice(&self) -> (i64, i64) {
        if self.symmetric {
            let q = (1i64 << (self.bits - 1)) - 1;
            (-q, q)
        } else {
            (0, (1i64 << self.bits) - 1)
        }
    }
}

/// Scale and zero-point for one granularity slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceParams {
    pub scale: f64,
    pub zero_point: i64,
}

/// Calibrated quantization parameters: one [`SliceParams`] per granularity
/// unit plus the shared integer lattice bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantParams {
    pub slices: Vec<SliceParams>,
    pub clip_lo: i64,
    pub clip_hi: i64,
}

impl QuantParams {
    fn identity() -> Self {
        QuantParams {
            slices: Vec::new(),
            clip_lo: 0,
            clip_hi: 0,
        }
    }
}

/// Maps matrix elements onto granularity slices.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Slicing {
    rows: usize,
    cols: usize,
    kind: SliceKind,
}

#[derive(Debug, Clone, Copy)]
enum SliceKind {
    Single,
    PerRow,
    PerCol,
    RowGroups { per_row: usize, group: usize },
}

impl Slicing {
    pub(crate) fn new(spec: &QuantSpec, rows: usize, cols: usize) -> Result<Self> {
        let kind = match spec.granularity {
            Granularity::PerTensor => SliceKind::Single,
            Granularity::PerChannel => match spec.channel_axis {
                Axis::Rows => SliceKind::PerRow,
                Axis::Cols => SliceKind::PerCol,
            },
            Granularity::PerToken => SliceKind::PerRow,
            Granularity::PerGroup { group_size } => {
                if group_size == 0 {
                    return Err(Error::Parameter("group_size must be >= 1".into()));
                }
                SliceKind::RowGroups {
                    per_row: cols.div_ceil(group_size).max(1),
                    group: group_size,
                }
            }
        };
        Ok(Slicing { rows, cols, kind })
    }

    pub(crate) fn n_slices(&self) -> usize {
        match self.kind {
            SliceKind::Single => 1,
            SliceKind::PerRow => self.rows,
            SliceKind::PerCol => self.cols,
            SliceKind::RowGroups { per_row, .. } => self.rows * per_row,
        }
    }

    #[inline]
    pub(crate) fn slice_of(&self, r: usize, c: usize) -> usize {
        match self.kind {
            SliceKind::Single => 0,
            SliceKind::PerRow => r,
            SliceKind::PerCol => c,
            SliceKind::RowGroups { per_row, group } => r * per_row + c / group,
        }
    }

    /// Values of slice `k`, in row-major visit order.
    fn slice_values(&self, x: &Matrix, k: usize) -> Vec<f64> {
        let mut out = Vec::new();
        match self.kind {
            SliceKind::Single => out.extend_from_slice(x.data()),
            SliceKind::PerRow => out.extend_from_slice(x.row(k)),
            SliceKind::PerCol => {
                for r in 0..self.rows {
                    out.push(x.get(r, k));
                }
            }
            SliceKind::RowGroups { per_row, group } => {
                let r = k / per_row;
                let g = k % per_row;
                let start = g * group;
                let end = ((g + 1) * group).min(self.cols);
                out.extend_from_slice(&x.row(r)[start..end]);
            }
        }
        out
    }
}

fn check_nonempty(x: &Matrix, what: &str) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{what} needs a nonempty tensor, got {}x{}",
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

/// Converts a per-slice value range into scale/zero-point. Asymmetric ranges
/// are widened to include zero so the zero-point stays on the lattice; an
/// all-zero range falls back to scale 1.
fn params_from_range(lo: f64, hi: f64, spec: &QuantSpec) -> SliceParams {
    let (qlo, qhi) = spec.lattice();
    if spec.symmetric {
        let absmax = lo.abs().max(hi.abs());
        if absmax == 0.0 {
            return SliceParams {
                scale: 1.0,
                zero_point: 0,
            };
        }
        SliceParams {
            scale: absmax / qhi as f64,
            zero_point: 0,
        }
    } else {
        let lo = lo.min(0.0);
        let hi = hi.max(0.0);
        if hi == lo {
            return SliceParams {
                scale: 1.0,
                zero_point: 0,
            };
        }
        let scale = (hi - lo) / (qhi - qlo) as f64;
        let zp = (-lo / scale).round() as i64;
        SliceParams {
            scale,
            zero_point: zp.clamp(qlo, qhi),
        }
    }
}

fn params_from_ranges(ranges: &[(f64, f64)], spec: &QuantSpec) -> QuantParams {
    let (clip_lo, clip_hi) = spec.lattice();
    QuantParams {
        slices: ranges
            .iter()
            .map(|&(lo, hi)| params_from_range(lo, hi, spec))
            .collect(),
        clip_lo,
        clip_hi,
    }
}

#[inline]
fn fq_value(v: f64, p: &SliceParams, clip_lo: i64, clip_hi: i64) -> f64 {
    // round() is half-away-from-zero in IEEE f64
    let q = (v / p.scale).round() + p.zero_point as f64;
    let q = q.clamp(clip_lo as f64, clip_hi as f64);
    (q - p.zero_point as f64) * p.scale
}

fn slice_min_max(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Min-max calibration: the clipping range of each slice is its observed
/// [min, max].
pub fn calibrate_minmax(x: &Matrix, spec: &QuantSpec) -> Result<QuantParams> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(QuantParams::identity());
    }
    check_nonempty(x, "calibrate_minmax")?;
    let slicing = Slicing::new(spec, x.rows(), x.cols())?;
    let ranges: Vec<(f64, f64)> = (0..slicing.n_slices())
        .map(|k| slice_min_max(&slicing.slice_values(x, k)))
        .collect();
    Ok(params_from_ranges(&ranges, spec))
}

/// Linear-interpolated order statistic of a sorted sample.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[i] + (sorted[i + 1] - sorted[i]) * frac
    }
}

/// Percentile calibration: the clipping range of each slice is
/// [percentile(1-q), percentile(q)].
pub fn calibrate_percentile(x: &Matrix, spec: &QuantSpec, q: f64) -> Result<QuantParams> {
    spec.validate()?;
    if !(q > 0.5 && q <= 1.0) {
        return Err(Error::Parameter(format!(
            "percentile q must lie in (0.5, 1], got {q}"
        )));
    }
    if spec.is_identity() {
        return Ok(QuantParams::identity());
    }
    check_nonempty(x, "calibrate_percentile")?;
    let slicing = Slicing::new(spec, x.rows(), x.cols())?;
    let ranges: Vec<(f64, f64)> = (0..slicing.n_slices())
        .map(|k| {
            let mut vals = slicing.slice_values(x, k);
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (
                percentile_sorted(&vals, 1.0 - q),
                percentile_sorted(&vals, q),
            )
        })
        .collect();
    Ok(params_from_ranges(&ranges, spec))
}

fn slice_mse_for_range(values: &[f64], lo: f64, hi: f64, spec: &QuantSpec) -> f64 {
    let p = params_from_range(lo, hi, spec);
    let (clip_lo, clip_hi) = spec.lattice();
    let mut sum = 0.0;
    for &v in values {
        let d = fq_value(v, &p, clip_lo, clip_hi) - v;
        sum += d * d;
    }
    sum / values.len().max(1) as f64
}

/// MSE-optimal calibration: per slice, tries `grid_points` linearly spaced
/// fractions i/grid_points (i = 1..=grid_points) of the min-max range and
/// keeps the one with the lowest fake-quantization MSE on the calibration
/// tensor. The full range is always a candidate, so the result never loses
/// to min-max.
pub fn calibrate_omse(x: &Matrix, spec: &QuantSpec, grid_points: usize) -> Result<QuantParams> {
    spec.validate()?;
    if grid_points < 2 {
        return Err(Error::Parameter(format!(
            "omse grid needs at least 2 points, got {grid_points}"
        )));
    }
    if spec.is_identity() {
        return Ok(QuantParams::identity());
    }
    check_nonempty(x, "calibrate_omse")?;
    let slicing = Slicing::new(spec, x.rows(), x.cols())?;
    let ranges: Vec<(f64, f64)> = (0..slicing.n_slices())
        .map(|k| {
            let vals = slicing.slice_values(x, k);
            let (lo, hi) = slice_min_max(&vals);
            let mut best = (lo, hi);
            let mut best_mse = f64::INFINITY;
            for i in 1..=grid_points {
                let f = i as f64 / grid_points as f64;
                let cand = (lo * f, hi * f);
                let mse = slice_mse_for_range(&vals, cand.0, cand.1, spec);
                // strict improvement keeps the widest range on ties,
                // scanning from narrow to wide would flip that; prefer the
                // last (widest) candidate on exact ties by using <=
                if mse <= best_mse {
                    best_mse = mse;
                    best = cand;
                }
            }
            best
        })
        .collect();
    Ok(params_from_ranges(&ranges, spec))
}

/// Quantize-dequantize simulation: per element,
/// `clamp(round(x / scale) + zero_point, clip_lo, clip_hi)` then
/// `(q - zero_point) * scale`.
pub fn fake_quant(x: &Matrix, params: &QuantParams, spec: &QuantSpec) -> Result<Matrix> {
    if spec.is_identity() {
        return Ok(x.clone());
    }
    let slicing = Slicing::new(spec, x.rows(), x.cols())?;
    if slicing.n_slices() != params.slices.len() {
        return Err(Error::Dimension(format!(
            "fake_quant: {} granularity on a {}x{} tensor needs {} slices, params carry {}",
            spec.granularity,
            x.rows(),
            x.cols(),
            slicing.n_slices(),
            params.slices.len()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let p = &params.slices[slicing.slice_of(r, c)];
            out.set(
                r,
                c,
                fq_value(x.get(r, c), p, params.clip_lo, params.clip_hi),
            );
        }
    }
    Ok(out)
}

/// Number of granularity slices `spec` produces on a tensor of this shape.
pub fn calibrate_slice_count(spec: &QuantSpec, x: &Matrix) -> Result<usize> {
    if spec.is_identity() {
        return Ok(0);
    }
    Ok(Slicing::new(spec, x.rows(), x.cols())?.n_slices())
}

/// Slice index of element (r, c) under `spec` on a rows x cols tensor.
pub fn slice_index(
    spec: &QuantSpec,
    rows: usize,
    cols: usize,
    r: usize,
    c: usize,
) -> Result<usize> {
    Ok(Slicing::new(spec, rows, cols)?.slice_of(r, c))
}

/// Min-max calibrate and fake-quantize in one step; identity specs pass the
/// tensor through.
pub fn quantize_minmax(x: &Matrix, spec: &QuantSpec) -> Result<Matrix> {
    if spec.is_identity() {
        return Ok(x.clone());
    }
    let params = calibrate_minmax(x, spec)?;
    fake_quant(x, &params, spec)
}

/// Mean squared fake-quantization error per element under min-max
/// calibration (the "MSE" column of the analysis reports).
pub fn quant_mse_minmax(x: &Matrix, spec: &QuantSpec) -> Result<f64> {
    let q = quantize_minmax(x, spec)?;
    Ok(crate::tensor::mean_sq_diff(&q, x))
}
