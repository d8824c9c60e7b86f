//! The sub-problems of the alternating solver and their gradients.
//!
//! | variable | 1-D | 2-D (vertical / horizontal) |
//! |----------|-----|-----------------------------|
//! | pattern  | L1  | L4 / L5                     |
//! | anomaly  | L2  | L6                          |
//! | noise    | L3  | L7                          |
//!
//! The pattern objectives replace `R(λ)` by the unnormalized `S(λ)` and add
//! a penalty `ρ₁ Σᵢ (Σⱼ|Sᵢⱼ| − 1)²` that keeps the row sums near one, plus
//! `ρ₂‖λ‖₁`. The anomaly and noise objectives use the normalized `R(λ)`.
//! Absolute values use the subgradient `sgn(0) = 0`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Dimension, Ix1, Ix2};

use crate::error::{check_len, Error, Result};
use crate::periodic::{row_abs_sums, toeplitz, PeriodicPatternVector, SelfRepOperator};

/// A smooth-plus-subgradient objective over an `ndarray` variable.
pub trait Objective<D: Dimension> {
    fn value_and_gradient(&self, x: &ndarray::Array<f64, D>) -> (f64, ndarray::Array<f64, D>);

    fn value(&self, x: &ndarray::Array<f64, D>) -> f64 {
        self.value_and_gradient(x).0
    }
}

#[inline]
pub(crate) fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `out[l] = Σ_{|i−k| = l} m[i][k]`.
pub(crate) fn lag_sums(m: ArrayView2<f64>) -> Array1<f64> {
    let n = m.nrows();
    let mut out = Array1::zeros(n);
    for i in 0..n {
        for k in 0..n {
            out[i.abs_diff(k)] += m[[i, k]];
        }
    }
    out
}

/// Value and gradient of `ρ₁ Σᵢ (rᵢ − 1)² + ρ₂ ‖λ‖₁`, `rᵢ` the row abs-sums.
fn pattern_penalty(lags: ArrayView1<f64>, rho1: f64, rho2: f64) -> (f64, Array1<f64>) {
    let n = lags.len();
    let dev = row_abs_sums(lags) - 1.0;
    let mut value = rho1 * dev.iter().map(|d| d * d).sum::<f64>();
    value += rho2 * lags.iter().map(|v| v.abs()).sum::<f64>();

    // Row i contains lag l once above the diagonal (i >= l) and once below
    // (i + l <= n - 1); lag 0 only once.
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + dev[i];
    }
    let total = prefix[n];
    let grad = Array1::from_shape_fn(n, |l| {
        let s = sgn(lags[l]);
        let weight = if l == 0 {
            total
        } else {
            (total - prefix[l]) + prefix[n - l]
        };
        2.0 * rho1 * s * weight + rho2 * s
    });
    (value, grad)
}

/// L1: pattern objective for a 1-D signal, with `z = y − a − e` fixed.
#[derive(Debug, Clone)]
pub struct PatternObjective1d {
    target: Array1<f64>,
    rho1: f64,
    rho2: f64,
}

impl PatternObjective1d {
    pub fn new(target: Array1<f64>, rho1: f64, rho2: f64) -> Self {
        Self { target, rho1, rho2 }
    }
}

impl Objective<Ix1> for PatternObjective1d {
    fn value_and_gradient(&self, lags: &Array1<f64>) -> (f64, Array1<f64>) {
        let z = &self.target;
        let n = z.len();
        let s = toeplitz(lags.view());
        let m = z - &s.dot(z);
        let mut data_grad = Array1::zeros(n);
        for l in 0..n {
            let mut acc = 0.0;
            for i in 0..n - l {
                acc += m[i] * z[i + l];
                if l > 0 {
                    acc += m[i + l] * z[i];
                }
            }
            data_grad[l] = -2.0 * acc;
        }
        let (pen, pen_grad) = pattern_penalty(lags.view(), self.rho1, self.rho2);
        (m.dot(&m) + pen, data_grad + pen_grad)
    }
}

/// L4/L5: pattern objective for an image direction.
///
/// The data term `‖Z − S·Z‖²_F` only depends on `Z` through the Gram matrix
/// `C = Z·Zᵀ`, which is fixed while the pattern is updated.
#[derive(Debug, Clone)]
pub struct PatternObjective2d {
    gram: Array2<f64>,
    rho1: f64,
    rho2: f64,
}

impl PatternObjective2d {
    /// L4: periodicity along the row index (`λ₁`).
    pub fn vertical(z: ArrayView2<f64>, rho1: f64, rho2: f64) -> Self {
        Self {
            gram: z.dot(&z.t()),
            rho1,
            rho2,
        }
    }

    /// L5: periodicity along the column index (`λ₂`).
    pub fn horizontal(z: ArrayView2<f64>, rho1: f64, rho2: f64) -> Self {
        Self {
            gram: z.t().dot(&z),
            rho1,
            rho2,
        }
    }
}

impl Objective<Ix1> for PatternObjective2d {
    fn value_and_gradient(&self, lags: &Array1<f64>) -> (f64, Array1<f64>) {
        let s = toeplitz(lags.view());
        // G = (I − S)·C, value = tr(G·(I − S)) = tr(G) − Σ G∘S.
        let g = &self.gram - &s.dot(&self.gram);
        let trace: f64 = g.diag().sum();
        let cross: f64 = g.iter().zip(s.iter()).map(|(a, b)| a * b).sum();
        let data_grad = lag_sums(g.view()) * -2.0;
        let (pen, pen_grad) = pattern_penalty(lags.view(), self.rho1, self.rho2);
        (trace - cross + pen, data_grad + pen_grad)
    }
}

/// Regularizer on the anomaly or noise variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    /// `β‖x‖₁`
    L1(f64),
    /// `β‖x‖²₂`
    SquaredL2(f64),
}

impl Regularizer {
    fn value<'a>(&self, x: impl Iterator<Item = &'a f64>) -> f64 {
        match *self {
            Regularizer::L1(b) => b * x.map(|v| v.abs()).sum::<f64>(),
            Regularizer::SquaredL2(b) => b * x.map(|v| v * v).sum::<f64>(),
        }
    }

    fn gradient(&self, x: f64) -> f64 {
        match *self {
            Regularizer::L1(b) => b * sgn(x),
            Regularizer::SquaredL2(b) => 2.0 * b * x,
        }
    }
}

/// L2/L3: `‖(y − a − e) − R·(y − a − e)‖² + reg(x)` over `x ∈ {a, e}`.
#[derive(Debug, Clone)]
pub struct ResidualObjective1d<'a> {
    /// `y` minus the component held fixed.
    base: Array1<f64>,
    r: &'a Array2<f64>,
    reg: Regularizer,
}

impl<'a> ResidualObjective1d<'a> {
    /// L2 over `a` with `e` fixed.
    pub fn anomaly(y: ArrayView1<f64>, e: ArrayView1<f64>, r: &'a Array2<f64>, beta1: f64) -> Self {
        Self {
            base: &y - &e,
            r,
            reg: Regularizer::L1(beta1),
        }
    }

    /// L3 over `e` with `a` fixed.
    pub fn noise(y: ArrayView1<f64>, a: ArrayView1<f64>, r: &'a Array2<f64>, beta2: f64) -> Self {
        Self {
            base: &y - &a,
            r,
            reg: Regularizer::SquaredL2(beta2),
        }
    }
}

impl Objective<Ix1> for ResidualObjective1d<'_> {
    fn value_and_gradient(&self, x: &Array1<f64>) -> (f64, Array1<f64>) {
        let z = &self.base - x;
        let m = &z - &self.r.dot(&z);
        // d/dx ‖X(base − x)‖² = −2 Xᵀ m, X = I − R
        let xtm = &m - &self.r.t().dot(&m);
        let value = m.dot(&m) + self.reg.value(x.iter());
        let grad = ndarray::Zip::from(&xtm)
            .and(x)
            .map_collect(|&g, &xi| -2.0 * g + self.reg.gradient(xi));
        (value, grad)
    }
}

/// L6/L7: `‖Z − R₁·Z·R₂ᵀ‖²_F + reg(X)`, `Z = Y − A − E`, over `X ∈ {A, E}`.
#[derive(Debug, Clone)]
pub struct ResidualObjective2d<'a> {
    base: Array2<f64>,
    r1: &'a Array2<f64>,
    r2: &'a Array2<f64>,
    reg: Regularizer,
}

impl<'a> ResidualObjective2d<'a> {
    /// L6 over `A` with `E` fixed.
    pub fn anomaly(
        y: ArrayView2<f64>,
        e: ArrayView2<f64>,
        r1: &'a Array2<f64>,
        r2: &'a Array2<f64>,
        beta1: f64,
    ) -> Self {
        Self {
            base: &y - &e,
            r1,
            r2,
            reg: Regularizer::L1(beta1),
        }
    }

    /// L7 over `E` with `A` fixed.
    pub fn noise(
        y: ArrayView2<f64>,
        a: ArrayView2<f64>,
        r1: &'a Array2<f64>,
        r2: &'a Array2<f64>,
        beta2: f64,
    ) -> Self {
        Self {
            base: &y - &a,
            r1,
            r2,
            reg: Regularizer::SquaredL2(beta2),
        }
    }
}

impl Objective<Ix2> for ResidualObjective2d<'_> {
    fn value_and_gradient(&self, x: &Array2<f64>) -> (f64, Array2<f64>) {
        let z = &self.base - x;
        let m = &z - &self.r1.dot(&z).dot(&self.r2.t());
        let xtm = &m - &self.r1.t().dot(&m).dot(self.r2);
        let value = m.iter().map(|v| v * v).sum::<f64>() + self.reg.value(x.iter());
        let grad = ndarray::Zip::from(&xtm)
            .and(x)
            .map_collect(|&g, &xi| -2.0 * g + self.reg.gradient(xi));
        (value, grad)
    }
}

fn check_square(what: &str, x: ArrayView2<f64>, n: usize) -> Result<()> {
    if x.dim() != (n, n) {
        return Err(Error::Dimension(format!(
            "{what}: expected {n}x{n}, found {:?}",
            x.dim()
        )));
    }
    Ok(())
}

/// Evaluates L1 at `λ` for the given decomposition state.
pub fn objective_l1(
    lambda: &PeriodicPatternVector,
    y: ArrayView1<f64>,
    a: ArrayView1<f64>,
    e: ArrayView1<f64>,
    rho1: f64,
    rho2: f64,
) -> Result<f64> {
    let n = lambda.len();
    check_len("y", n, y.len())?;
    check_len("a", n, a.len())?;
    check_len("e", n, e.len())?;
    let z = &y - &a - &e;
    Ok(PatternObjective1d::new(z, rho1, rho2).value(lambda.values()))
}

/// Evaluates L2 at `a`.
pub fn objective_l2(
    a: ArrayView1<f64>,
    y: ArrayView1<f64>,
    lambda: &PeriodicPatternVector,
    e: ArrayView1<f64>,
    beta1: f64,
) -> Result<f64> {
    let n = lambda.len();
    check_len("y", n, y.len())?;
    check_len("a", n, a.len())?;
    check_len("e", n, e.len())?;
    let op = SelfRepOperator::new(lambda);
    Ok(ResidualObjective1d::anomaly(y, e, &op.r, beta1).value(&a.to_owned()))
}

/// Evaluates L3 at `e`.
pub fn objective_l3(
    e: ArrayView1<f64>,
    y: ArrayView1<f64>,
    lambda: &PeriodicPatternVector,
    a: ArrayView1<f64>,
    beta2: f64,
) -> Result<f64> {
    let n = lambda.len();
    check_len("y", n, y.len())?;
    check_len("a", n, a.len())?;
    check_len("e", n, e.len())?;
    let op = SelfRepOperator::new(lambda);
    Ok(ResidualObjective1d::noise(y, a, &op.r, beta2).value(&e.to_owned()))
}

/// Evaluates L4 (`vertical = true`) or L5 at the given pattern.
pub fn objective_pattern_2d(
    lambda: &PeriodicPatternVector,
    y: ArrayView2<f64>,
    a: ArrayView2<f64>,
    e: ArrayView2<f64>,
    rho1: f64,
    rho2: f64,
    vertical: bool,
) -> Result<f64> {
    let n = lambda.len();
    check_square("Y", y, n)?;
    check_square("A", a, n)?;
    check_square("E", e, n)?;
    let z = &y - &a - &e;
    let obj = if vertical {
        PatternObjective2d::vertical(z.view(), rho1, rho2)
    } else {
        PatternObjective2d::horizontal(z.view(), rho1, rho2)
    };
    Ok(obj.value(lambda.values()))
}
