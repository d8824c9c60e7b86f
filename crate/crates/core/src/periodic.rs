//! Continuous self-representation of periodic signals.
//!
//! A periodic pattern vector `λ ∈ Rⁿ` defines a symmetric Toeplitz matrix
//! `S(λ)` with `S[i][j] = λ[|i - j|]` and a diagonal normalization `W(λ)`
//! holding the inverse absolute row sums of `S`. Their product
//! `R(λ) = W(λ)·S(λ)` maps a signal to the weighted average of the samples
//! that sit at the lags where `λ` is nonzero. When `λ` is supported only on
//! multiples of the true period, an exactly periodic signal is a fixed point
//! of `R`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Floor applied to the absolute row sums before they are inverted.
pub const W_EPSILON: f64 = 1e-12;

/// The lag weights `λ₀ … λₙ₋₁` together with the number of guarded entries.
///
/// The first and last `guard` entries are pinned to zero; this excludes the
/// trivial solution `λ = [1, 0, …]` that reproduces any signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicPatternVector {
    values: Array1<f64>,
    guard: usize,
}

impl PeriodicPatternVector {
    /// All-zero pattern of length `n`.
    pub fn zeros(n: usize, guard: usize) -> Self {
        Self {
            values: Array1::zeros(n),
            guard,
        }
    }

    /// Wraps `values`, zeroing the guarded entries.
    pub fn new(values: Array1<f64>, guard: usize) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Dimension(format!(
                "pattern vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if 2 * guard > values.len() {
            return Err(Error::InvalidConfig(format!(
                "guard {guard} too large for length {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegeneratePattern("non-finite entry".into()));
        }
        let mut out = Self { values, guard };
        out.project();
        Ok(out)
    }

    /// Pattern with no guarded entries.
    pub fn unguarded(values: Array1<f64>) -> Result<Self> {
        Self::new(values, 0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn guard(&self) -> usize {
        self.guard
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array1<f64> {
        self.values
    }

    /// Replaces the values (same length) and re-applies the guard.
    pub fn set_values(&mut self, values: Array1<f64>) -> Result<()> {
        check_len("pattern vector", self.len(), values.len())?;
        self.values = values;
        self.project();
        Ok(())
    }

    /// Zeroes the guarded entries in place.
    pub fn project(&mut self) {
        project_guard(self.values.view_mut(), self.guard);
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Largest absolute entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `Σⱼ |λ_{|i-j|}|` for every row `i` of `S(λ)`.
    pub fn row_abs_sums(&self) -> Array1<f64> {
        row_abs_sums(self.values.view())
    }
}

/// Zeroes indices `0..guard` and `n-guard..n`.
pub fn project_guard(mut values: ndarray::ArrayViewMut1<f64>, guard: usize) {
    let n = values.len();
    let guard = guard.min(n);
    for i in 0..guard {
        values[i] = 0.0;
        values[n - 1 - i] = 0.0;
    }
}

/// Row absolute sums of the Toeplitz matrix built from `lags`, in O(n).
///
/// Row `i` sees lags `0..=i` (looking up) and `1..n-i` (looking down).
pub fn row_abs_sums(lags: ArrayView1<f64>) -> Array1<f64> {
    let n = lags.len();
    let mut prefix = vec![0.0; n + 1];
    for l in 0..n {
        prefix[l + 1] = prefix[l] + lags[l].abs();
    }
    Array1::from_shape_fn(n, |i| prefix[i + 1] + (prefix[n - i] - prefix[1]))
}

/// Symmetric Toeplitz matrix `S[i][j] = λ[|i - j|]`.
pub fn build_s(lambda: &PeriodicPatternVector) -> Array2<f64> {
    toeplitz(lambda.values.view())
}

pub(crate) fn toeplitz(lags: ArrayView1<f64>) -> Array2<f64> {
    let n = lags.len();
    Array2::from_shape_fn((n, n), |(i, j)| lags[i.abs_diff(j)])
}

/// Diagonal of `W(λ)`, with a record of rows whose sum hit the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationWeights {
    pub diag: Array1<f64>,
    /// Number of rows whose absolute sum was below [`W_EPSILON`].
    pub degenerate_rows: usize,
}

impl NormalizationWeights {
    pub fn is_degenerate(&self) -> bool {
        self.degenerate_rows > 0
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_diag(&self.diag)
    }
}

/// `W[i][i] = 1 / max(Σⱼ |λ_{|i-j|}|, ε)`.
pub fn build_w(lambda: &PeriodicPatternVector) -> NormalizationWeights {
    let sums = lambda.row_abs_sums();
    let degenerate_rows = sums.iter().filter(|&&s| s < W_EPSILON).count();
    NormalizationWeights {
        diag: sums.mapv(|s| 1.0 / s.max(W_EPSILON)),
        degenerate_rows,
    }
}

/// The materialized operators `S(λ)`, `W(λ)` and `R(λ) = W·S`.
#[derive(Debug, Clone)]
pub struct SelfRepOperator {
    pub s: Array2<f64>,
    pub w: NormalizationWeights,
    pub r: Array2<f64>,
}

impl SelfRepOperator {
    pub fn new(lambda: &PeriodicPatternVector) -> Self {
        let s = build_s(lambda);
        let w = build_w(lambda);
        let mut r = s.clone();
        for (mut row, &wi) in r.axis_iter_mut(Axis(0)).zip(w.diag.iter()) {
            row *= wi;
        }
        Self { s, w, r }
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn is_degenerate(&self) -> bool {
        self.w.is_degenerate()
    }
}

/// `R(λ)·y`.
pub fn apply_r_1d(lambda: &PeriodicPatternVector, y: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_len("signal", lambda.len(), y.len())?;
    let op = SelfRepOperator::new(lambda);
    Ok(op.r.dot(&y))
}

/// `‖y − R(λ)·y‖²`. A degenerate `W` is logged but still evaluated.
pub fn residual_1d(lambda: &PeriodicPatternVector, y: ArrayView1<f64>) -> Result<f64> {
    check_len("signal", lambda.len(), y.len())?;
    let op = SelfRepOperator::new(lambda);
    if op.is_degenerate() {
        log::warn!(
            "residual evaluated with {} degenerate normalization rows",
            op.w.degenerate_rows
        );
    }
    let ry = op.r.dot(&y);
    Ok(y.iter().zip(ry.iter()).map(|(a, b)| (a - b).powi(2)).sum())
}

/// Joint self-representation `R(λ₁)·Y·R(λ₂)ᵀ`.
///
/// `λ₁` acts along the vertical (row index) direction and `λ₂` along the
/// horizontal one.
pub fn apply_r_2d(
    lambda1: &PeriodicPatternVector,
    lambda2: &PeriodicPatternVector,
    y: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let (rows, cols) = y.dim();
    if rows != cols {
        return Err(Error::Dimension(format!("image must be square, got {rows}x{cols}")));
    }
    check_len("vertical pattern vector", rows, lambda1.len())?;
    check_len("horizontal pattern vector", cols, lambda2.len())?;
    let r1 = SelfRepOperator::new(lambda1).r;
    let r2 = SelfRepOperator::new(lambda2).r;
    Ok(r1.dot(&y).dot(&r2.t()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    fn pattern(v: &[f64]) -> PeriodicPatternVector {
        PeriodicPatternVector::unguarded(Array1::from(v.to_vec())).unwrap()
    }

    #[test]
    fn s_is_toeplitz_readoff() {
        let s = build_s(&pattern(&[0.5, 0.2, 0.1]));
        assert_eq!(
            s,
            array![[0.5, 0.2, 0.1], [0.2, 0.5, 0.2], [0.1, 0.2, 0.5]]
        );
        let s = build_s(&pattern(&[0.0, 1.0, 0.0, 0.0]));
        for i in 0..4usize {
            for j in 0..4 {
                let expected = if i.abs_diff(j) == 1 { 1.0 } else { 0.0 };
                assert_eq!(s[[i, j]], expected);
            }
        }
        assert!(build_s(&pattern(&[0.0; 5])).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn w_hand_sums() {
        let w = build_w(&pattern(&[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(w.diag, array![1.0, 0.5, 0.5, 1.0]);
        assert!(!w.is_degenerate());

        let w = build_w(&pattern(&[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(w.to_matrix(), Array2::eye(4));

        let w = build_w(&pattern(&[0.0; 4]));
        assert!(w.is_degenerate());
        assert_eq!(w.degenerate_rows, 4);
        assert!(w.diag.iter().all(|&d| d == 1e12));
    }

    #[test]
    fn row_sums_match_naive() {
        let lags = array![0.3, -0.2, 0.0, 1.5, 0.7, -0.1];
        let fast = row_abs_sums(lags.view());
        let n = lags.len();
        for i in 0..n {
            let naive: f64 = (0..n).map(|j| lags[i.abs_diff(j)].abs()).sum();
            assert_abs_diff_eq!(fast[i], naive, epsilon = 1e-14);
        }
    }

    #[test]
    fn guard_is_applied() {
        let p = PeriodicPatternVector::new(Array1::ones(10), 2).unwrap();
        assert_eq!(
            p.values(),
            &array![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]
        );
        assert!(PeriodicPatternVector::new(Array1::ones(10), 6).is_err());
        assert!(PeriodicPatternVector::new(array![1.0, f64::NAN], 0).is_err());
    }

    #[test]
    fn r_preserves_constants() {
        let lam = pattern(&[0.0, 0.3, 0.0, 0.8, 0.1, 0.0]);
        let y = Array1::from_elem(6, 2.5);
        let out = apply_r_1d(&lam, y.view()).unwrap();
        for v in out {
            assert_abs_diff_eq!(v, 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn r_reproduces_period_two_signal() {
        let lam = pattern(&[0.0, 0.0, 0.7, 0.0, 0.4, 0.0]);
        let y = array![1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        let out = apply_r_1d(&lam, y.view()).unwrap();
        assert_abs_diff_eq!(out, y, epsilon = 1e-12);
        assert!(residual_1d(&lam, y.view()).unwrap() < 1e-20);
    }

    #[test]
    fn r_lag_one_neighbour_average() {
        // rows: [1 | 0 1 0 0] -> y1, [.5 .5] -> (y0+y2)/2, ...
        let lam = pattern(&[0.0, 1.0, 0.0, 0.0]);
        let y = array![0.0, 1.0, 0.0, 1.0];
        let out = apply_r_1d(&lam, y.view()).unwrap();
        assert_eq!(out, array![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn dimension_errors() {
        let lam = pattern(&[0.0, 1.0, 0.0]);
        assert!(matches!(
            apply_r_1d(&lam, Array1::zeros(4).view()),
            Err(Error::Dimension(_))
        ));
        assert!(residual_1d(&lam, Array1::zeros(2).view()).is_err());
        assert!(apply_r_2d(&lam, &lam, Array2::zeros((3, 4)).view()).is_err());
    }

    #[test]
    fn zero_pattern_residual_is_flagged_not_error() {
        let lam = pattern(&[0.0; 4]);
        let y = array![1.0, 2.0, 3.0, 4.0];
        // R = 0 so the residual is ‖y‖².
        assert_abs_diff_eq!(residual_1d(&lam, y.view()).unwrap(), 30.0, epsilon = 1e-12);
    }

    #[test]
    fn two_d_constant_image() {
        let lam1 = pattern(&[0.0, 0.0, 0.5, 0.2, 0.1]);
        let lam2 = pattern(&[0.0, 1.0, 0.0, 0.3, 0.0]);
        let y = Array2::from_elem((5, 5), 0.25);
        let out = apply_r_2d(&lam1, &lam2, y.view()).unwrap();
        assert_abs_diff_eq!(out, y, epsilon = 1e-12);
    }
}
