//! Dense row-major f64 matrices and the handful of kernels the rest of the
//! toolkit is built from: matmul against a transposed right operand,
//! per-column statistics, row softmax, and LayerNorm.
//!
//! Everything here is pure and quantization-agnostic. With the `parallel`
//! feature (default) the matmul splits across rows with rayon; results are
//! bit-identical to the serial path because each output element is an
//! independent dot product evaluated in the same order.

use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Dense 2-D matrix of finite f64 values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "non-finite value {} at row {}, col {}",
                data[pos],
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Internal constructor for values produced by our own arithmetic.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Fills from a generator over (row, col). The generator must produce
    /// finite values.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = f(r, c);
                debug_assert!(v.is_finite());
                data.push(v);
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copy of columns [start, start+len).
    pub fn columns(&self, start: usize, len: usize) -> Matrix {
        assert!(start + len <= self.cols, "column slice out of range");
        let mut out = Matrix::zeros(self.rows, len);
        for r in 0..self.rows {
            let src = &self.data[r * self.cols + start..r * self.cols + start + len];
            out.data[r * len..(r + 1) * len].copy_from_slice(src);
        }
        out
    }

    /// Writes `block` into columns [start, start+block.cols).
    pub fn set_columns(&mut self, start: usize, block: &Matrix) {
        assert_eq!(self.rows, block.rows);
        assert!(start + block.cols <= self.cols);
        for r in 0..self.rows {
            let dst = r * self.cols + start;
            self.data[dst..dst + block.cols]
                .copy_from_slice(&block.data[r * block.cols..(r + 1) * block.cols]);
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// (min, max) over all entries; None when empty.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        if self.data.is_empty() {
            return None;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Some((lo, hi))
    }
}

/// Elementwise sum; shapes must match.
pub fn add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::Dimension(format!(
            "add: left is {}x{}, right is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect();
    Ok(Matrix::from_raw(a.rows, a.cols, data))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

fn matmul_check(a: &Matrix, b_transposed: &Matrix) -> Result<()> {
    if a.cols != b_transposed.cols {
        return Err(Error::Dimension(format!(
            "matmul: left is {}x{}, right (transposed) is {}x{}; inner dims {} vs {}",
            a.rows, a.cols, b_transposed.rows, b_transposed.cols, a.cols, b_transposed.cols
        )));
    }
    Ok(())
}

/// `a · b_transposedᵀ`: entry (i, k) is the dot product of row i of `a` with
/// row k of `b_transposed`. Storing the right operand transposed keeps both
/// factors row-contiguous, which is the layout linear-layer weights use.
///
/// Dispatches to the rayon path under the `parallel` feature.
pub fn matmul(a: &Matrix, b_transposed: &Matrix) -> Result<Matrix> {
    #[cfg(feature = "parallel")]
    {
        matmul_check(a, b_transposed)?;
        let n = b_transposed.rows;
        let mut data = vec![0.0; a.rows * n];
        data.par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, out_row)| {
                let ar = a.row(i);
                for (k, slot) in out_row.iter_mut().enumerate() {
                    *slot = dot(ar, b_transposed.row(k));
                }
            });
        Ok(Matrix::from_raw(a.rows, n, data))
    }
    #[cfg(not(feature = "parallel"))]
    {
        matmul_serial(a, b_transposed)
    }
}

/// Single-threaded matmul, kept callable for benchmarking against the
/// parallel path. Produces bit-identical results.
pub fn matmul_serial(a: &Matrix, b_transposed: &Matrix) -> Result<Matrix> {
    matmul_check(a, b_transposed)?;
    let n = b_transposed.rows;
    let mut data = vec![0.0; a.rows * n];
    for i in 0..a.rows {
        let ar = a.row(i);
        for k in 0..n {
            data[i * n + k] = dot(ar, b_transposed.row(k));
        }
    }
    Ok(Matrix::from_raw(a.rows, n, data))
}

/// Per-column (min, max) pairs.
pub fn channel_stats(x: &Matrix) -> Result<Vec<(f64, f64)>> {
    if x.is_empty() {
        return Err(Error::EmptyInput(format!(
            "channel_stats needs at least one row and one column, got {}x{}",
            x.rows, x.cols
        )));
    }
    let mut stats = vec![(f64::INFINITY, f64::NEG_INFINITY); x.cols];
    for r in 0..x.rows {
        for (c, s) in stats.iter_mut().enumerate() {
            let v = x.get(r, c);
            s.0 = s.0.min(v);
            s.1 = s.1.max(v);
        }
    }
    Ok(stats)
}

/// Row-wise softmax of `x * scale`, numerically stabilized by max
/// subtraction. With `causal_mask` set, entry (i, j) for j > i is excluded
/// (contributes zero) and `x` must be square.
pub fn softmax_rows(x: &Matrix, scale: f64, causal_mask: bool) -> Result<Matrix> {
    debug_assert!(scale > 0.0, "softmax scale must be positive");
    if causal_mask && x.rows != x.cols {
        return Err(Error::Dimension(format!(
            "causal softmax needs a square matrix, got {}x{}",
            x.rows, x.cols
        )));
    }
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let active = if causal_mask { r + 1 } else { x.cols };
        let row = x.row(r);
        let mut max = f64::NEG_INFINITY;
        for &v in &row[..active] {
            max = max.max(v * scale);
        }
        let mut sum = 0.0;
        for (c, &v) in row[..active].iter().enumerate() {
            let e = (v * scale - max).exp();
            out.set(r, c, e);
            sum += e;
        }
        for c in 0..active {
            out.set(r, c, out.get(r, c) / sum);
        }
    }
    Ok(out)
}

/// Row-wise LayerNorm: standardize each row with population variance plus
/// `eps`, then apply the per-column affine `gamma`/`beta`.
pub fn layernorm(x: &Matrix, gamma: &[f64], beta: &[f64], eps: f64) -> Result<Matrix> {
    debug_assert!(eps > 0.0);
    if gamma.len() != x.cols || beta.len() != x.cols {
        return Err(Error::Dimension(format!(
            "layernorm: input has {} columns but gamma has {} and beta has {}",
            x.cols,
            gamma.len(),
            beta.len()
        )));
    }
    let n = x.cols as f64;
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for c in 0..x.cols {
            out.set(r, c, (row[c] - mean) * inv * gamma[c] + beta[c]);
        }
    }
    Ok(out)
}

/// max over entries of |a - b| / max(1, |b|); the relative-error metric used
/// by the equivalence tests.
pub fn max_rel_err(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.cols, b.cols);
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Mean of squared entry differences over all elements.
pub fn mean_sq_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.cols, b.cols);
    if a.data.is_empty() {
        return 0.0;
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    sum / a.data.len() as f64
}

/// Squared Frobenius norm of (a - b) divided by the row count: the
/// output-change measure, a per-row mean of squared row differences.
pub fn output_change(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.cols, b.cols);
    if a.rows == 0 {
        return 0.0;
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    sum / a.rows as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.uniform_in(lo, hi))
    }

    #[test]
    fn from_vec_rejects_bad_length_and_nonfinite() {
        assert!(matches!(
            Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn matmul_identity_preserved() {
        let x = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let i = Matrix::identity(2);
        assert_eq!(matmul(&x, &i).unwrap(), x);

        let mut rng = Rng::new(11);
        let a = random_matrix(&mut rng, 5, 7, -3.0, 3.0);
        let i7 = Matrix::identity(7);
        assert_eq!(matmul(&a, &i7).unwrap(), a);
    }

    #[test]
    fn matmul_scalar_case() {
        let a = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let b = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(42);
        let a = random_matrix(&mut rng, 3, 4, -2.0, 2.0);
        let bt = random_matrix(&mut rng, 5, 4, -2.0, 2.0);
        let got = matmul(&a, &bt).unwrap();
        // independent accumulation order: sum over j outermost
        let mut expect = Matrix::zeros(3, 5);
        for j in 0..4 {
            for i in 0..3 {
                for k in 0..5 {
                    let v = expect.get(i, k) + a.get(i, j) * bt.get(k, j);
                    expect.set(i, k, v);
                }
            }
        }
        for i in 0..3 {
            for k in 0..5 {
                assert!((got.get(i, k) - expect.get(i, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 4);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("2x4"), "{msg}");
    }

    #[test]
    fn matmul_serial_matches_parallel_bitwise() {
        let mut rng = Rng::new(5);
        let a = random_matrix(&mut rng, 17, 23, -4.0, 4.0);
        let bt = random_matrix(&mut rng, 9, 23, -4.0, 4.0);
        assert_eq!(matmul(&a, &bt).unwrap(), matmul_serial(&a, &bt).unwrap());
    }

    #[test]
    fn channel_stats_examples() {
        let x = Matrix::from_vec(2, 1, vec![-97.0, -58.0]).unwrap();
        assert_eq!(channel_stats(&x).unwrap(), vec![(-97.0, -58.0)]);

        let c = Matrix::from_vec(3, 1, vec![4.5, 4.5, 4.5]).unwrap();
        assert_eq!(channel_stats(&c).unwrap(), vec![(4.5, 4.5)]);

        assert!(matches!(
            channel_stats(&Matrix::zeros(0, 3)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn channel_stats_matches_scan_and_bounds_elements() {
        let mut rng = Rng::new(7);
        let x = random_matrix(&mut rng, 10, 3, -9.0, 9.0);
        let stats = channel_stats(&x).unwrap();
        for (c, stat) in stats.iter().enumerate() {
            let col: Vec<f64> = (0..10).map(|r| x.get(r, c)).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(*stat, (lo, hi));
            assert!(lo <= hi);
            for v in col {
                assert!(stat.0 <= v && v <= stat.1);
            }
        }
    }

    #[test]
    fn softmax_degenerate_and_symmetric() {
        let one = Matrix::from_vec(1, 1, vec![3.7]).unwrap();
        assert_eq!(softmax_rows(&one, 1.0, false).unwrap().get(0, 0), 1.0);

        let z = Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let s = softmax_rows(&z, 1.0, false).unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let x = Matrix::from_vec(1, 2, vec![2.0_f64.ln(), 0.0]).unwrap();
        let s = softmax_rows(&x, 1.0, false).unwrap();
        assert!((s.get(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.get(0, 1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask_zeroes_future() {
        let mut rng = Rng::new(13);
        let x = random_matrix(&mut rng, 6, 6, -50.0, 50.0);
        for causal in [false, true] {
            let s = softmax_rows(&x, 0.25, causal).unwrap();
            for r in 0..6 {
                let sum: f64 = s.row(r).iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12);
                for c in 0..6 {
                    let v = s.get(r, c);
                    assert!((0.0..=1.0).contains(&v));
                    if causal && c > r {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
        assert!(matches!(
            softmax_rows(&Matrix::zeros(2, 3), 1.0, true),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn layernorm_identity_affine_on_standardized_row() {
        // row already zero-mean unit-variance (population)
        let v = 2.0_f64.sqrt() / 2.0;
        let x = Matrix::from_vec(1, 2, vec![-1.0, 1.0]).unwrap();
        let out = layernorm(&x, &[1.0, 1.0], &[0.0, 0.0], 1e-5).unwrap();
        // population var of [-1, 1] is 1; eps perturbs by ~5e-6
        assert!((out.get(0, 0) + 1.0).abs() < 1e-4);
        assert!((out.get(0, 1) - 1.0).abs() < 1e-4);
        let _ = v;
    }

    #[test]
    fn layernorm_constant_row_yields_beta() {
        let x = Matrix::from_vec(1, 3, vec![5.0, 5.0, 5.0]).unwrap();
        let out = layernorm(&x, &[2.0, 2.0, 2.0], &[0.5, -0.5, 0.0], 1e-5).unwrap();
        assert_eq!(out.row(0), &[0.5, -0.5, 0.0]);
    }

    #[test]
    fn layernorm_matches_two_pass_oracle() {
        let mut rng = Rng::new(23);
        let x = random_matrix(&mut rng, 4, 8, -5.0, 5.0);
        let gamma: Vec<f64> = (0..8).map(|_| rng.uniform_in(0.5, 2.0)).collect();
        let beta: Vec<f64> = (0..8).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let eps = 1e-5;
        let got = layernorm(&x, &gamma, &beta, eps).unwrap();
        for r in 0..4 {
            let row = x.row(r);
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            for c in 0..8 {
                let expect = (row[c] - mean) / (var + eps).sqrt() * gamma[c] + beta[c];
                assert!((got.get(r, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layernorm_shift_invariance() {
        let mut rng = Rng::new(29);
        let x = random_matrix(&mut rng, 3, 6, -2.0, 2.0);
        let shifted = x.map(|v| v + 123.456);
        let gamma = vec![1.5; 6];
        let beta = vec![0.25; 6];
        let a = layernorm(&x, &gamma, &beta, 1e-5).unwrap();
        let b = layernorm(&shifted, &gamma, &beta, 1e-5).unwrap();
        assert!(max_rel_err(&a, &b) < 1e-10);
    }

    #[test]
    fn layernorm_length_mismatch() {
        let x = Matrix::zeros(1, 3);
        assert!(matches!(
            layernorm(&x, &[1.0; 2], &[0.0; 3], 1e-5),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn column_slicing_round_trip() {
        let mut rng = Rng::new(31);
        let x = random_matrix(&mut rng, 3, 8, -1.0, 1.0);
        let left = x.columns(0, 3);
        let right = x.columns(3, 5);
        let mut back = Matrix::zeros(3, 8);
        back.set_columns(0, &left);
        back.set_columns(3, &right);
        assert_eq!(back, x);
    }
}
