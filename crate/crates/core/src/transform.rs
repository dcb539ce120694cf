//! Channel-wise shifting and scaling of activations, and the
//! equivalence-preserving migration of their inverses into LayerNorm
//! parameters, downstream linear layers, and residual branches.
//!
//! The transform replaces an activation X by (X - z) ⊘ s. The shift z
//! centers every channel at zero, collapsing the tensor range to the largest
//! single-channel range; the scale s squeezes channels whose post-shift peak
//! exceeds a threshold t into [-t, t] and leaves the rest untouched. Both
//! effects are absorbed exactly by the consuming modules, so the
//! floating-point function of the network never changes.

use crate::error::{Error, Result};
use crate::tensor::{channel_stats, matmul, Matrix};

/// Per-channel shift and scale plus the outlier threshold that produced the
/// scale. Scales must be positive; vectors built by [`compute_scale`]
/// additionally satisfy `scale[j] >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformVectors {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub threshold: f64,
}

impl TransformVectors {
    pub fn new(shift: Vec<f64>, scale: Vec<f64>, threshold: f64) -> Result<Self> {
        if shift.len() != scale.len() {
            return Err(Error::Dimension(format!(
                "transform vectors disagree: shift has {} entries, scale has {}",
                shift.len(),
                scale.len()
            )));
        }
        if !threshold.is_finite() || threshold <= 0.0 {
            return Err(Error::Parameter(format!(
                "outlier threshold must be a positive real, got {threshold}"
            )));
        }
        if shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(
                "shift vector contains non-finite values".into(),
            ));
        }
        if scale.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Parameter(
                "scale vector entries must be positive and finite".into(),
            ));
        }
        Ok(TransformVectors {
            shift,
            scale,
            threshold,
        })
    }

    /// No-op transform of width `n`.
    pub fn identity(n: usize) -> Self {
        TransformVectors {
            shift: vec![0.0; n],
            scale: vec![1.0; n],
            threshold: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.shift.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shift.is_empty()
    }

    fn check_width(&self, cols: usize, what: &str) -> Result<()> {
        if self.len() != cols {
            return Err(Error::Dimension(format!(
                "{what}: transform is {} wide but tensor has {} channels",
                self.len(),
                cols
            )));
        }
        Ok(())
    }
}

/// A dense affine layer: weight stored out-channels x in-channels, applied
/// as `x · Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Dimension(format!(
                "linear layer: weight is {}x{} but bias has {} entries",
                weight.rows(),
                weight.cols(),
                bias.len()
            )));
        }
        Ok(LinearLayer { weight, bias })
    }

    pub fn in_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = matmul(x, &self.weight)?;
        for r in 0..y.rows() {
            for c in 0..y.cols() {
                y.set(r, c, y.get(r, c) + self.bias[c]);
            }
        }
        Ok(y)
    }
}

///// Per-channel shift values: the midpoint (max + min)/2 of each channel over
/// the pooled calibration batch. Shifting by this centers every channel at
/// zero.
pub fn compute_shift(x_calib: &Matrix) -> Result<Vec<f64>> {
    if x_calib.is_empty() {
        return Err(Error::EmptyInput(format!(
            "compute_shift needs a nonempty calibration tensor, got {}x{}",
            x_calib.rows(),
            x_calib.cols()
        )));
    }
    Ok(channel_stats(x_calib)?
        .iter()
        .map(|&(lo, hi)| (hi + lo) / 2.0)
        .collect())
}

/// Per-channel scale values for threshold `t`:
/// `s[j] = max(1, peak_j / t)` where `peak_j` is the largest absolute
/// post-shift value of channel j. Channels already inside [-t, t] keep
/// scale 1. When the shift is the channel midpoint the peak equals the
/// channel half-range; with shifting disabled (z = 0) it is the channel
/// absolute maximum, keeping s well-defined either way.
///
/// The division is nudged up by at most a couple of ulps when needed so that
/// the scaled calibration data provably lands inside [-t, t] under f64
/// rounding.
pub fn compute_scale(x_calib: &Matrix, shift: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Parameter(format!(
            "outlier threshold must be a positive real, got {t}"
        )));
    }
    if shift.len() != x_calib.cols() {
        return Err(Error::Dimension(format!(
            "compute_scale: shift has {} entries but tensor has {} channels",
            shift.len(),
            x_calib.cols()
        )));
    }
    if x_calib.is_empty() {
        return Err(Error::EmptyInput(
            "compute_scale needs calibration rows".into(),
        ));
    }
    let peaks = post_shift_peaks(x_calib, shift);
    Ok(peaks
        .iter()
        .map(|&peak| {
            if peak <= t {
                return 1.0;
            }
            let mut s = peak / t;
            // guarantee fl(peak / s) <= t despite rounding
            while peak / s > t {
                s = f64::from_bits(s.to_bits() + 1);
            }
            s
        })
        .collect())
}

/// Largest absolute post-shift value per channel.
pub fn post_shift_peaks(x_calib: &Matrix, shift: &[f64]) -> Vec<f64> {
    let mut peaks = vec![0.0f64; x_calib.cols()];
    for r in 0..x_calib.rows() {
        for (c, peak) in peaks.iter_mut().enumerate() {
            *peak = peak.max((x_calib.get(r, c) - shift[c]).abs());
        }
    }
    peaks
}

/// Applies the transform: `(x - z) ⊘ s` per channel.
pub fn apply_transform(x: &Matrix, tv: &TransformVectors) -> Result<Matrix> {
    tv.check_width(x.cols(), "apply_transform")?;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            out.set(r, c, (x.get(r, c) - tv.shift[c]) / tv.scale[c]);
        }
    }
    Ok(out)
}

/// Inverse of [`apply_transform`]: `x ⊙ s + z`. This is the channel-wise
/// multiply-add the shortcut branch of a Post-LN block performs so the
/// residual sees the original activation.
pub fn residual_correction(x_transformed: &Matrix, tv: &TransformVectors) -> Result<Matrix> {
    tv.check_width(x_transformed.cols(), "residual_correction")?;
    let mut out = Matrix::zeros(x_transformed.rows(), x_transformed.cols());
    for r in 0..x_transformed.rows() {
        for c in 0..x_transformed.cols() {
            out.set(r, c, x_transformed.get(r, c) * tv.scale[c] + tv.shift[c]);
        }
    }
    Ok(out)
}

/// Absorbs the transform into a consuming linear layer:
/// `W̃[k, j] = W[k, j] * s[j]` and `b̃ = z · Wᵀ + b`, so that
/// `apply_transform(x) · W̃ᵀ + b̃ == x · Wᵀ + b` for every x.
pub fn migrate_linear(layer: &LinearLayer, tv: &TransformVectors) -> Result<LinearLayer> {
    tv.check_width(layer.in_width(), "migrate_linear")?;
    let w = &layer.weight;
    let weight = Matrix::from_fn(w.rows(), w.cols(), |k, j| w.get(k, j) * tv.scale[j]);
    let bias: Vec<f64> = (0..w.rows())
        .map(|k| {
            let mut acc = 0.0;
            for j in 0..w.cols() {
                acc += tv.shift[j] * w.get(k, j);
            }
            acc + layer.bias[k]
        })
        .collect();
    Ok(LinearLayer { weight, bias })
}

/// Rewrites LayerNorm affine parameters so the normalized output comes out
/// already transformed: `gamma' = gamma ⊘ s`, `beta' = (beta - z) ⊘ s`.
pub fn fuse_into_layernorm(
    gamma: &[f64],
    beta: &[f64],
    tv: &TransformVectors,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if gamma.len() != beta.len() || gamma.len() != tv.len() {
        return Err(Error::Dimension(format!(
            "fuse_into_layernorm: gamma has {} entries, beta {}, transform {}",
            gamma.len(),
            beta.len(),
            tv.len()
        )));
    }
    let g = gamma.iter().zip(&tv.scale).map(|(&g, &s)| g / s).collect();
    let b = beta
        .iter()
        .zip(tv.shift.iter().zip(&tv.scale))
        .map(|(&b, (&z, &s))| (b - z) / s)
        .collect();
    Ok((g, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::{layernorm, max_rel_err};

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.uniform_in(lo, hi))
    }

    fn random_tv(rng: &mut Rng, n: usize) -> TransformVectors {
        TransformVectors::new(
            (0..n).map(|_| rng.uniform_in(-10.0, 10.0)).collect(),
            (0..n).map(|_| rng.uniform_in(0.5, 8.0)).collect(),
            rng.uniform_in(0.5, 10.0),
        )
        .unwrap()
    }

    #[test]
    fn shift_is_channel_midpoint() {
        let x = Matrix::from_vec(2, 1, vec![-97.0, -58.0]).unwrap();
        assert_eq!(compute_shift(&x).unwrap(), vec![-77.5]);

        let sym = Matrix::from_vec(2, 1, vec![-4.0, 4.0]).unwrap();
        assert_eq!(compute_shift(&sym).unwrap(), vec![0.0]);

        let constant = Matrix::from_vec(3, 1, vec![2.5, 2.5, 2.5]).unwrap();
        let z = compute_shift(&constant).unwrap();
        assert_eq!(z, vec![2.5]);
        let tv = TransformVectors::new(z, vec![1.0], 1.0).unwrap();
        let shifted = apply_transform(&constant, &tv).unwrap();
        assert!(shifted.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_examples() {
        // post-shift peak 20 at t = 5 -> s = 4; peak 3 -> s = 1
        let x = Matrix::from_vec(2, 2, vec![20.0, 3.0, -20.0, -3.0]).unwrap();
        let s = compute_scale(&x, &[0.0, 0.0], 5.0).unwrap();
        assert_eq!(s, vec![4.0, 1.0]);
        assert!(matches!(
            compute_scale(&x, &[0.0, 0.0], 0.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn pipeline_collapses_to_threshold_band() {
        // two asymmetric outlier channels among benign ones, squeezed to t=5
        let mut rng = Rng::new(101);
        let mut x = random_matrix(&mut rng, 32, 8, -0.5, 0.5);
        for r in 0..32 {
            x.set(r, 2, rng.uniform_in(-97.0, -58.0));
            x.set(r, 5, rng.uniform_in(4.5, 43.5));
        }
        let z = compute_shift(&x).unwrap();
        let t = 5.0;
        let s = compute_scale(&x, &z, t).unwrap();
        assert!(s.iter().all(|&v| v >= 1.0));
        let tv = TransformVectors::new(z, s, t).unwrap();
        let y = apply_transform(&x, &tv).unwrap();
        let (lo, hi) = y.value_range().unwrap();
        assert!(
            lo >= -t && hi <= t,
            "range ({lo}, {hi}) escaped [-{t}, {t}]"
        );
    }

    #[test]
    fn centering_makes_range_equal_largest_channel_range() {
        let mut rng = Rng::new(103);
        let x = random_matrix(&mut rng, 24, 6, -30.0, 10.0);
        let z = compute_shift(&x).unwrap();
        let tv = TransformVectors::new(z, vec![1.0; 6], 1.0).unwrap();
        let shifted = apply_transform(&x, &tv).unwrap();
        let stats = channel_stats(&shifted).unwrap();
        let mut largest_half = 0.0f64;
        for &(lo, hi) in &stats {
            assert!(
                (hi + lo).abs() <= 1e-12,
                "channel not centered: ({lo}, {hi})"
            );
            largest_half = largest_half.max(hi);
        }
        let (lo, hi) = shifted.value_range().unwrap();
        assert!((hi - largest_half).abs() <= 1e-12);
        assert!((lo + largest_half).abs() <= 1e-12);
    }

    #[test]
    fn apply_identity_and_hand_case() {
        let x = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let id = TransformVectors::identity(1);
        assert_eq!(apply_transform(&x, &id).unwrap(), x);

        let tv = TransformVectors::new(vec![1.0], vec![2.0], 1.0).unwrap();
        assert_eq!(apply_transform(&x, &tv).unwrap().get(0, 0), 0.5);

        let wide = Matrix::zeros(1, 3);
        assert!(matches!(
            apply_transform(&wide, &tv),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn migrate_hand_case() {
        let layer =
            LinearLayer::new(Matrix::from_vec(1, 1, vec![3.0]).unwrap(), vec![1.0]).unwrap();
        let tv = TransformVectors::new(vec![1.0], vec![2.0], 1.0).unwrap();
        let m = migrate_linear(&layer, &tv).unwrap();
        assert_eq!(m.weight.get(0, 0), 6.0);
        assert_eq!(m.bias, vec![4.0]);
        // 0.5 * 6 + 4 == 2 * 3 + 1
        let x = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let xt = apply_transform(&x, &tv).unwrap();
        assert_eq!(m.forward(&xt).unwrap().get(0, 0), 7.0);
        assert_eq!(layer.forward(&x).unwrap().get(0, 0), 7.0);
    }

    #[test]
    fn migrate_identity_leaves_layer_unchanged() {
        let mut rng = Rng::new(107);
        let layer = LinearLayer::new(
            random_matrix(&mut rng, 4, 6, -1.0, 1.0),
            (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let m = migrate_linear(&layer, &TransformVectors::identity(6)).unwrap();
        assert_eq!(m, layer);
    }

    #[test]
    fn migration_reproduces_affine_map_universally() {
        let mut rng = Rng::new(109);
        let layer = LinearLayer::new(
            random_matrix(&mut rng, 8, 16, -1.0, 1.0),
            (0..8).map(|_| rng.uniform_in(-0.5, 0.5)).collect(),
        )
        .unwrap();
        let tv = random_tv(&mut rng, 16);
        let migrated = migrate_linear(&layer, &tv).unwrap();
        for _ in 0..100 {
            let x = random_matrix(&mut rng, 3, 16, -20.0, 20.0);
            let direct = layer.forward(&x).unwrap();
            let via = migrated
                .forward(&apply_transform(&x, &tv).unwrap())
                .unwrap();
            assert!(max_rel_err(&via, &direct) <= 1e-10);
        }
    }

    #[test]
    fn layernorm_fusion_hand_and_two_path() {
        let tv = TransformVectors::new(vec![1.0], vec![2.0], 1.0).unwrap();
        let (g, b) = fuse_into_layernorm(&[2.0], &[3.0], &tv).unwrap();
        assert_eq!((g, b), (vec![1.0], vec![1.0]));

        let id = TransformVectors::identity(2);
        let (g, b) = fuse_into_layernorm(&[1.5, 0.5], &[0.1, -0.2], &id).unwrap();
        assert_eq!(g, vec![1.5, 0.5]);
        assert_eq!(b, vec![0.1, -0.2]);

        let mut rng = Rng::new(113);
        let n = 10;
        let gamma: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.2, 2.0)).collect();
        let beta: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let tv = random_tv(&mut rng, n);
        let (gf, bf) = fuse_into_layernorm(&gamma, &beta, &tv).unwrap();
        let x = random_matrix(&mut rng, 5, n, -4.0, 4.0);
        let fused = layernorm(&x, &gf, &bf, 1e-5).unwrap();
        let two_path = apply_transform(&layernorm(&x, &gamma, &beta, 1e-5).unwrap(), &tv).unwrap();
        assert!(max_rel_err(&fused, &two_path) <= 1e-10);
    }

    #[test]
    fn residual_correction_inverts_transform() {
        let tv = TransformVectors::new(vec![1.0], vec![2.0], 1.0).unwrap();
        let xt = Matrix::from_vec(1, 1, vec![0.5]).unwrap();
        assert_eq!(residual_correction(&xt, &tv).unwrap().get(0, 0), 2.0);

        let id = TransformVectors::identity(3);
        let x = Matrix::from_vec(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(residual_correction(&x, &id).unwrap(), x);

        let mut rng = Rng::new(127);
        let tv = random_tv(&mut rng, 6);
        let x = random_matrix(&mut rng, 4, 6, -15.0, 15.0);
        let back = residual_correction(&apply_transform(&x, &tv).unwrap(), &tv).unwrap();
        assert!(max_rel_err(&back, &x) <= 1e-10);
    }

    #[test]
    fn scale_floor_holds_for_any_threshold() {
        let mut rng = Rng::new(131);
        let x = random_matrix(&mut rng, 16, 12, -50.0, 50.0);
        let z = compute_shift(&x).unwrap();
        for t in [0.01, 0.5, 3.0, 100.0, 1e6] {
            let s = compute_scale(&x, &z, t).unwrap();
            assert!(s.iter().all(|&v| v >= 1.0));
        }
    }

    #[test]
    fn transform_vector_validation() {
        assert!(TransformVectors::new(vec![0.0], vec![1.0, 1.0], 1.0).is_err());
        assert!(TransformVectors::new(vec![0.0], vec![0.0], 1.0).is_err());
        assert!(TransformVectors::new(vec![0.0], vec![1.0], -1.0).is_err());
        assert!(TransformVectors::new(vec![f64::NAN], vec![1.0], 1.0).is_err());
    }
}
