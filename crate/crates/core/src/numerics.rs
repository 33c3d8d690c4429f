//! Dense vector/matrix kernels, softmax, cosine similarity, the Adam
//! optimizer, and a finite-difference gradient checker.
//!
//! Everything here is plain `f64` over contiguous slices. The training loops
//! in [`crate::embeddings`] and [`crate::abae`] are built on these kernels,
//! and the gradient checker is the validation harness for their hand-derived
//! backward passes.

use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_flat(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} matrix",
                values.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    /// `A * v` for a column vector `v` of length `cols`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "matvec: vector length {} vs {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `A^T * v` for a column vector `v` of length `rows`.
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "tr_matvec: vector length {} vs {} rows",
                v.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            add_scaled(&mut out, self.row(i), vi);
        }
        Ok(out)
    }

    /// `self += scale * other`, element-wise.
    pub fn add_scaled_matrix(&mut self, other: &DenseMatrix, scale: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} += {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Rank-one update `self += scale * u * v^T`.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "outer product {}x{} into {}x{}",
                u.len(),
                v.len(),
                self.rows,
                self.cols
            )));
        }
        for (i, &ui) in u.iter().enumerate() {
            add_scaled(self.row_mut(i), v, scale * ui);
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `target += scale * src`, element-wise over equal-length slices.
pub fn add_scaled(target: &mut [f64], src: &[f64], scale: f64) {
    debug_assert_eq!(target.len(), src.len());
    for (t, s) in target.iter_mut().zip(src) {
        *t += scale * s;
    }
}

pub fn scale(v: &mut [f64], s: f64) {
    for x in v.iter_mut() {
        *x *= s;
    }
}

/// Numerically stable softmax: subtracts the max before exponentiating.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in out.iter_mut() {
        *x /= sum;
    }
    Ok(out)
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "cosine of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidInput("zero-norm input".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Adam state for one parameter tensor: moment accumulators, hyperparameters,
/// and the step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != self.first_moment.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} params, {} grads, {} accumulators",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// One checked coordinate of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Report of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries: Vec<GradCheckEntry>,
}

/// Central-difference check of `analytic` against `loss` at `params`.
///
/// Only the listed `coords` are perturbed, so large parameter vectors can be
/// spot-checked on a sample. The relative error denominator is
/// `max(1, |g|, |g_hat|)`, which keeps coordinates with near-zero gradient
/// from blowing up the report.
pub fn finite_difference_check<F>(
    mut loss: F,
    params: &mut [f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient length {} vs {} params",
            analytic.len(),
            params.len()
        )));
    }
    let mut entries = Vec::with_capacity(coords.len());
    let mut max_rel_error: f64 = 0.0;
    for &c in coords {
        if c >= params.len() {
            return Err(Error::InvalidInput(format!(
                "coordinate {c} out of range for {} params",
                params.len()
            )));
        }
        let original = params[c];
        params[c] = original + h;
        let plus = loss(params);
        params[c] = original - h;
        let minus = loss(params);
        params[c] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite loss while perturbing coordinate {c}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let g = analytic[c];
        let rel_error = (g - numeric).abs() / 1.0_f64.max(g.abs()).max(numeric.abs());
        max_rel_error = max_rel_error.max(rel_error);
        entries.push(GradCheckEntry {
            coord: c,
            analytic: g,
            numeric,
            rel_error,
        });
    }
    Ok(GradCheckReport {
        max_rel_error,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_symmetry() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_no_overflow() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p[0] > 0.999999 && p[1] < 1e-6);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softmax_two_logit_value() {
        // e^4 / (e^4 + e^1)
        let p = softmax(&[4.0, 1.0]).unwrap();
        assert!((p[0] - 0.9526).abs() < 1e-4);
        assert!((p[1] - 0.0474).abs() < 1e-4);
    }

    #[test]
    fn softmax_empty_errors() {
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.random_range(1..8);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let c: f64 = rng.random_range(-100.0..100.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = softmax(&v).unwrap();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-12);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 0.7071).abs() < 1e-4);
    }

    #[test]
    fn cosine_zero_norm_errors() {
        let err = cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("zero-norm input"));
    }

    #[test]
    fn cosine_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let u: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0) + 0.1).collect();
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0) + 0.1).collect();
            let a = rng.random_range(0.01..10.0);
            let b = rng.random_range(0.01..10.0);
            let su: Vec<f64> = u.iter().map(|x| a * x).collect();
            let sv: Vec<f64> = v.iter().map(|x| b * x).collect();
            let c1 = cosine_similarity(&u, &v).unwrap();
            let c2 = cosine_similarity(&su, &sv).unwrap();
            assert!((c1 - c2).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut params = vec![1.5, -2.5, 0.25];
        let before = params.clone();
        let mut state = AdamState::new(3);
        for _ in 0..5 {
            state.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        // At t=1 the bias-corrected ratio m_hat / sqrt(v_hat) is g / |g|.
        let mut params = vec![3.0];
        let mut state = AdamState::new(1).with_learning_rate(0.001);
        state.step(&mut params, &[7.3]).unwrap();
        assert!((params[0] - (3.0 - 0.001)).abs() < 1e-9);
    }

    #[test]
    fn adam_descends_quadratic() {
        // f(x) = x^2, gradient 2x.
        let mut params = vec![3.0];
        let mut state = AdamState::new(1).with_learning_rate(0.1);
        let loss = |x: f64| x * x;
        let start = loss(params[0]);
        let g1 = 2.0 * params[0];
        state.step(&mut params, &[g1]).unwrap();
        let mid = loss(params[0]);
        let g2 = 2.0 * params[0];
        state.step(&mut params, &[g2]).unwrap();
        let end = loss(params[0]);
        assert!(mid < start);
        assert!(end < mid);
    }

    #[test]
    fn adam_shape_mismatch_errors() {
        let mut state = AdamState::new(2);
        let mut params = vec![0.0, 0.0, 0.0];
        assert!(state.step(&mut params, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn grad_check_quadratic() {
        let mut params = vec![3.0];
        let analytic = vec![6.0];
        let report = finite_difference_check(
            |p| p[0] * p[0],
            &mut params,
            &analytic,
            &[0],
            1e-5,
        )
        .unwrap();
        assert!((report.entries[0].numeric - 6.0).abs() < 1e-6);
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn grad_check_constant_function() {
        let mut params = vec![1.0, 2.0];
        let analytic = vec![0.0, 0.0];
        let report =
            finite_difference_check(|_| 4.25, &mut params, &analytic, &[0, 1], 1e-5).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn grad_check_rejects_non_finite_loss() {
        let mut params = vec![0.0];
        let analytic = vec![0.0];
        let err = finite_difference_check(
            |p| 1.0 / p[0],
            &mut params,
            &analytic,
            &[0],
            0.0,
        );
        assert!(err.is_err());
    }

    #[test]
    fn matvec_and_transpose() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(a.matvec(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0, 11.0]);
        assert_eq!(a.tr_matvec(&[1.0, 1.0, 1.0]).unwrap(), vec![9.0, 12.0]);
        assert!(a.matvec(&[1.0]).is_err());
    }

    #[test]
    fn outer_product_update() {
        let mut a = DenseMatrix::zeros(2, 3);
        a.add_outer(&[1.0, 2.0], &[3.0, 4.0, 5.0], 1.0).unwrap();
        assert_eq!(a.row(0), &[3.0, 4.0, 5.0]);
        assert_eq!(a.row(1), &[6.0, 8.0, 10.0]);
    }
}
