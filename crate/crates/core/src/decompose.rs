//! Alternating minimization for the periodic-sparse decomposition.
//!
//! A signal (or image) is split as `y = y* + a + e`: a periodic part
//! explained by the self-representation operator, sparse anomalies `a`
//! and small dense noise `e`. Each outer iteration
//!
//! 1. refits the pattern vector(s) with Adam until they stop moving,
//! 2. runs `K` Adam blocks on the anomalies,
//! 3. runs `K` noise updates (closed-form ridge in 1-D, Adam in 2-D),
//!
//! and the outer loop ends once the pattern vectors are stable.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::adam::{adam_minimize, AdamParams};
use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::objective::{
    Objective, PatternObjective1d, PatternObjective2d, ResidualObjective1d, ResidualObjective2d,
};
use crate::periodic::{project_guard, PeriodicPatternVector, SelfRepOperator};

/// Hyperparameters of the decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsdConfig {
    /// Weight of the row-sum penalty in the pattern objectives.
    pub rho1: f64,
    /// Weight of `‖λ‖₁` in the pattern objectives.
    pub rho2: f64,
    /// Weight of `‖a‖₁`.
    pub beta1: f64,
    /// Weight of `‖e‖²`.
    pub beta2: f64,
    /// Leading/trailing pattern entries pinned to zero; `None` picks
    /// `max(4, n / 32)`.
    pub guard_p: Option<usize>,
    /// Tolerance on `‖λᵗ − λᵗ⁻¹‖∞` and on single Adam moves.
    pub eps_conv: f64,
    /// Anomaly and noise blocks per outer iteration.
    pub inner_k: usize,
    pub adam: AdamParams,
    pub max_outer: usize,
    /// Cap on pattern blocks within one outer iteration.
    pub max_inner: usize,
}

impl Default for PsdConfig {
    fn default() -> Self {
        Self {
            rho1: 100.0,
            rho2: 100.0,
            beta1: 0.3,
            beta2: 10.0,
            guard_p: None,
            eps_conv: 1e-3,
            inner_k: 5,
            adam: AdamParams::default(),
            max_outer: 50,
            max_inner: 10,
        }
    }
}

impl PsdConfig {
    pub fn guard_for(&self, n: usize) -> usize {
        self.guard_p.unwrap_or_else(|| (n / 32).max(4))
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.rho1, self.rho2, self.beta1, self.beta2];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig(
                "rho1, rho2, beta1 and beta2 must be finite and nonnegative".into(),
            ));
        }
        if !(self.eps_conv > 0.0) {
            return Err(Error::InvalidConfig("eps_conv must be positive".into()));
        }
        if self.guard_p == Some(0) {
            return Err(Error::InvalidConfig("guard_p must be at least 1".into()));
        }
        if self.inner_k == 0 || self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidConfig(
                "inner_k, max_outer and max_inner must be at least 1".into(),
            ));
        }
        self.adam.validate()
    }

    fn checked_guard(&self, n: usize) -> Result<usize> {
        self.validate()?;
        let guard = self.guard_for(n);
        if n < 4 * guard {
            return Err(Error::TooSmall {
                edge: n,
                required: 4 * guard,
            });
        }
        Ok(guard)
    }
}

/// Diagnostics for one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub outer: usize,
    pub pattern_blocks: usize,
    /// `‖λᵗ − λᵗ⁻¹‖∞` (maximum over both directions in 2-D).
    pub pattern_change: f64,
    /// `‖Z − R·Z‖² + β₁‖a‖₁ + β₂‖e‖²` at the end of the iteration.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition1D {
    pub periodic: Array1<f64>,
    pub anomalies: Array1<f64>,
    pub noise: Array1<f64>,
    pub lambda: PeriodicPatternVector,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition2D {
    pub periodic: Array2<f64>,
    pub anomalies: Array2<f64>,
    pub noise: Array2<f64>,
    pub lambda1: PeriodicPatternVector,
    pub lambda2: PeriodicPatternVector,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
}

/// Searches `e` within a few ulps of `y − (p + a)` so that `(p + a) + e == y`.
fn exact_noise(y: f64, p: f64, a: f64) -> Option<f64> {
    let s = p + a;
    let cand = y - s;
    if s + cand == y {
        return Some(cand);
    }
    let (mut up, mut down) = (cand, cand);
    for _ in 0..8 {
        up = up.next_up();
        down = down.next_down();
        if s + up == y {
            return Some(up);
        }
        if s + down == y {
            return Some(down);
        }
    }
    None
}

/// Returns `(p, e')` with `p ≈ y − a − e`, `e' ≈ e` to a few ulps and
/// `(p + a) + e' == y` in floating point.
///
/// Such a pair exists unless `|y|` is tiny compared to `|e|` and carries
/// mantissa bits finer than the sum can express; the unadjusted values are
/// returned in that case.
fn exact_split(y: f64, a: f64, e: f64) -> (f64, f64) {
    let p = y - a - e;
    if let Some(e) = exact_noise(y, p, a) {
        return (p, e);
    }
    let (mut up, mut down) = (p, p);
    for _ in 0..4 {
        up = up.next_up();
        down = down.next_down();
        if let Some(e) = exact_noise(y, up, a) {
            return (up, e);
        }
        if let Some(e) = exact_noise(y, down, a) {
            return (down, e);
        }
    }
    (p, e)
}

/// Periodic part `y − a − e`, with `p` and `e` nudged by at most a few ulps
/// so that `periodic + a + e` reproduces `y` bit for bit.
fn split_remainder<D: ndarray::Dimension>(
    y: &ndarray::Array<f64, D>,
    a: &ndarray::Array<f64, D>,
    e: &mut ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut periodic = ndarray::Array::zeros(y.raw_dim());
    Zip::from(&mut periodic)
        .and(&mut *e)
        .and(y)
        .and(a)
        .for_each(|p, e, &y, &a| (*p, *e) = exact_split(y, a, *e));
    periodic
}

/// Closed-form minimizer of L3: `(XᵀX + β₂I)⁻¹ XᵀX (y − a)`, `X = I − R(λ)`.
pub fn ridge_solve_e(
    y: ArrayView1<f64>,
    a: ArrayView1<f64>,
    lambda: &PeriodicPatternVector,
    beta2: f64,
) -> Result<Array1<f64>> {
    let n = lambda.len();
    crate::error::check_len("y", n, y.len())?;
    crate::error::check_len("a", n, a.len())?;
    let op = SelfRepOperator::new(lambda);
    ridge_with_operator(y, a, &op.r, beta2)
}

fn ridge_with_operator(
    y: ArrayView1<f64>,
    a: ArrayView1<f64>,
    r: &Array2<f64>,
    beta2: f64,
) -> Result<Array1<f64>> {
    let n = r.nrows();
    let x = Array2::<f64>::eye(n) - r;
    let xtx = x.t().dot(&x);
    let mut lhs = xtx.clone();
    for i in 0..n {
        lhs[[i, i]] += beta2;
    }
    let rhs = xtx.dot(&(&y - &a));
    cholesky_solve(&lhs, &rhs)
}

fn full_objective_1d(
    y: &Array1<f64>,
    a: &Array1<f64>,
    e: &Array1<f64>,
    r: &Array2<f64>,
    cfg: &PsdConfig,
) -> f64 {
    ResidualObjective1d::anomaly(y.view(), e.view(), r, cfg.beta1).value(a)
        + cfg.beta2 * e.dot(e)
}

/// Decomposes a 1-D signal.
pub fn run_psd_1d(y: ArrayView1<f64>, cfg: &PsdConfig) -> Result<Decomposition1D> {
    let n = y.len();
    let guard = cfg.checked_guard(n)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dimension("signal contains non-finite samples".into()));
    }
    let y = y.to_owned();
    let mut lambda = PeriodicPatternVector::zeros(n, guard);
    let mut a = Array1::<f64>::zeros(n);
    let mut e = Array1::<f64>::zeros(n);
    let mut trace = Vec::new();
    let mut best: Option<(f64, PeriodicPatternVector, Array1<f64>, Array1<f64>)> = None;
    let mut converged = false;
    let project = |x: &mut Array1<f64>| project_guard(x.view_mut(), guard);

    for outer in 1..=cfg.max_outer {
        let previous = lambda.clone();

        let target = &y - &a - &e;
        let pattern = PatternObjective1d::new(target, cfg.rho1, cfg.rho2);
        let mut blocks = 0;
        loop {
            blocks += 1;
            let out = adam_minimize(&pattern, lambda.values().clone(), &cfg.adam, cfg.eps_conv, project)?;
            let step = PeriodicPatternVector::new(out.x, guard)?;
            let change = step.max_abs_diff(&lambda);
            lambda = step;
            if change <= cfg.eps_conv || blocks >= cfg.max_inner {
                break;
            }
        }

        let op = SelfRepOperator::new(&lambda);
        for _ in 0..cfg.inner_k {
            let obj = ResidualObjective1d::anomaly(y.view(), e.view(), &op.r, cfg.beta1);
            a = adam_minimize(&obj, a, &cfg.adam, cfg.eps_conv, |_| {})?.x;
        }
        for _ in 0..cfg.inner_k {
            e = ridge_with_operator(y.view(), a.view(), &op.r, cfg.beta2)?;
        }

        let change = lambda.max_abs_diff(&previous);
        let objective = full_objective_1d(&y, &a, &e, &op.r, cfg);
        log::debug!("psd-1d outer {outer}: blocks {blocks}, Δλ {change:.3e}, objective {objective:.6e}");
        trace.push(IterationRecord {
            outer,
            pattern_blocks: blocks,
            pattern_change: change,
            objective,
        });
        if best.as_ref().is_none_or(|b| objective < b.0) {
            best = Some((objective, lambda.clone(), a.clone(), e.clone()));
        }
        if change <= cfg.eps_conv {
            converged = true;
            break;
        }
    }

    if !converged {
        if let Some((_, l, ba, be)) = best {
            lambda = l;
            a = ba;
            e = be;
        }
    }
    let periodic = split_remainder(&y, &a, &mut e);
    Ok(Decomposition1D {
        periodic,
        anomalies: a,
        noise: e,
        lambda,
        trace,
        converged,
    })
}

fn full_objective_2d(
    y: &Array2<f64>,
    a: &Array2<f64>,
    e: &Array2<f64>,
    r1: &Array2<f64>,
    r2: &Array2<f64>,
    cfg: &PsdConfig,
) -> f64 {
    ResidualObjective2d::anomaly(y.view(), e.view(), r1, r2, cfg.beta1).value(a)
        + cfg.beta2 * e.iter().map(|v| v * v).sum::<f64>()
}

struct State2d {
    lambda1: PeriodicPatternVector,
    lambda2: PeriodicPatternVector,
    a: Array2<f64>,
    e: Array2<f64>,
}

/// Decomposes a square image.
pub fn run_psd_2d(y: ArrayView2<f64>, cfg: &PsdConfig) -> Result<Decomposition2D> {
    let (rows, cols) = y.dim();
    if rows != cols {
        return Err(Error::Dimension(format!("image must be square, got {rows}x{cols}")));
    }
    let n = rows;
    let guard = cfg.checked_guard(n)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dimension("image contains non-finite pixels".into()));
    }
    let y = y.to_owned();
    let mut st = State2d {
        lambda1: PeriodicPatternVector::zeros(n, guard),
        lambda2: PeriodicPatternVector::zeros(n, guard),
        a: Array2::zeros((n, n)),
        e: Array2::zeros((n, n)),
    };
    let mut trace = Vec::new();
    let mut best: Option<(f64, State2d)> = None;
    let mut converged = false;
    let project = |x: &mut Array1<f64>| project_guard(x.view_mut(), guard);

    for outer in 1..=cfg.max_outer {
        let prev1 = st.lambda1.clone();
        let prev2 = st.lambda2.clone();

        let z = &y - &st.a - &st.e;
        let vertical = PatternObjective2d::vertical(z.view(), cfg.rho1, cfg.rho2);
        let horizontal = PatternObjective2d::horizontal(z.view(), cfg.rho1, cfg.rho2);
        let mut blocks = 0;
        loop {
            blocks += 1;
            let out1 = adam_minimize(&vertical, st.lambda1.values().clone(), &cfg.adam, cfg.eps_conv, project)?;
            let out2 = adam_minimize(&horizontal, st.lambda2.values().clone(), &cfg.adam, cfg.eps_conv, project)?;
            let next1 = PeriodicPatternVector::new(out1.x, guard)?;
            let next2 = PeriodicPatternVector::new(out2.x, guard)?;
            let change = next1.max_abs_diff(&st.lambda1).max(next2.max_abs_diff(&st.lambda2));
            st.lambda1 = next1;
            st.lambda2 = next2;
            if change <= cfg.eps_conv || blocks >= cfg.max_inner {
                break;
            }
        }

        let r1 = SelfRepOperator::new(&st.lambda1).r;
        let r2 = SelfRepOperator::new(&st.lambda2).r;
        for _ in 0..cfg.inner_k {
            let obj = ResidualObjective2d::anomaly(y.view(), st.e.view(), &r1, &r2, cfg.beta1);
            let a = std::mem::take(&mut st.a);
            st.a = adam_minimize(&obj, a, &cfg.adam, cfg.eps_conv, |_| {})?.x;
        }
        for _ in 0..cfg.inner_k {
            let obj = ResidualObjective2d::noise(y.view(), st.a.view(), &r1, &r2, cfg.beta2);
            let e = std::mem::take(&mut st.e);
            st.e = adam_minimize(&obj, e, &cfg.adam, cfg.eps_conv, |_| {})?.x;
        }

        let change = st
            .lambda1
            .max_abs_diff(&prev1)
            .max(st.lambda2.max_abs_diff(&prev2));
        let objective = full_objective_2d(&y, &st.a, &st.e, &r1, &r2, cfg);
        log::debug!("psd-2d outer {outer}: blocks {blocks}, Δλ {change:.3e}, objective {objective:.6e}");
        trace.push(IterationRecord {
            outer,
            pattern_blocks: blocks,
            pattern_change: change,
            objective,
        });
        if best.as_ref().is_none_or(|b| objective < b.0) {
            best = Some((
                objective,
                State2d {
                    lambda1: st.lambda1.clone(),
                    lambda2: st.lambda2.clone(),
                    a: st.a.clone(),
                    e: st.e.clone(),
                },
            ));
        }
        if change <= cfg.eps_conv {
            converged = true;
            break;
        }
    }

    if !converged {
        if let Some((_, b)) = best {
            st = b;
        }
    }
    let mut e = st.e;
    let periodic = split_remainder(&y, &st.a, &mut e);
    Ok(Decomposition2D {
        periodic,
        anomalies: st.a,
        noise: e,
        lambda1: st.lambda1,
        lambda2: st.lambda2,
        trace,
        converged,
    })
}
