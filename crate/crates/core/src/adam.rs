//! Adam with bias correction, specialised to the block updates of the
//! alternating solver.

use ndarray::{Array, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub step_size: f64,
    pub decay1: f64,
    pub decay2: f64,
    pub eps_adam: f64,
    pub steps_per_block: usize,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            decay1: 0.9,
            decay2: 0.999,
            eps_adam: 1e-8,
            steps_per_block: 200,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step_size > 0.0
            && self.decay1 > 0.0
            && self.decay1 < 1.0
            && self.decay2 > 0.0
            && self.decay2 < 1.0
            && self.eps_adam > 0.0
            && self.steps_per_block >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Adam parameters {self:?}")))
        }
    }
}

/// Result of one Adam block.
#[derive(Debug, Clone)]
pub struct AdamOutcome<D: Dimension> {
    /// Lowest-objective iterate seen, the starting point included.
    pub x: Array<f64, D>,
    pub value: f64,
    pub initial_value: f64,
    pub steps: usize,
    /// True when a step moved no coordinate by more than the tolerance.
    pub stopped_early: bool,
}

/// Moment state for one variable.
#[derive(Debug, Clone)]
pub struct Adam<D: Dimension> {
    params: AdamParams,
    m: Array<f64, D>,
    v: Array<f64, D>,
    t: i32,
}

impl<D: Dimension> Adam<D> {
    pub fn new(params: AdamParams, shape: D) -> Self {
        Self {
            params,
            m: Array::zeros(shape.clone()),
            v: Array::zeros(shape),
            t: 0,
        }
    }

    /// Applies one update in place and returns the largest coordinate move.
    pub fn step(&mut self, x: &mut Array<f64, D>, grad: &Array<f64, D>) -> f64 {
        let AdamParams {
            step_size,
            decay1,
            decay2,
            eps_adam,
            ..
        } = self.params;
        self.t += 1;
        let c1 = 1.0 - decay1.powi(self.t);
        let c2 = 1.0 - decay2.powi(self.t);
        let mut max_move = 0.0f64;
        Zip::from(x)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|x, m, v, &g| {
                *m = decay1 * *m + (1.0 - decay1) * g;
                *v = decay2 * *v + (1.0 - decay2) * g * g;
                let delta = step_size * (*m / c1) / ((*v / c2).sqrt() + eps_adam);
                *x -= delta;
                max_move = max_move.max(delta.abs());
            });
        max_move
    }
}

/// Runs up to `params.steps_per_block` Adam steps from `init`.
///
/// `project` is applied after every step (the guard constraint on pattern
/// vectors; a no-op for unconstrained variables). The block stops early once
/// a step moves no coordinate by more than `tol`. The returned iterate is the
/// best one visited, so a block never ends above its starting objective.
pub fn adam_minimize<D, O, P>(
    objective: &O,
    init: Array<f64, D>,
    params: &AdamParams,
    tol: f64,
    mut project: P,
) -> Result<AdamOutcome<D>>
where
    D: Dimension,
    O: Objective<D> + ?Sized,
    P: FnMut(&mut Array<f64, D>),
{
    let mut x = init;
    project(&mut x);
    let (initial_value, mut grad) = objective.value_and_gradient(&x);
    if !initial_value.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            value: initial_value,
        });
    }
    let mut best = x.clone();
    let mut best_value = initial_value;
    let mut adam = Adam::new(*params, x.raw_dim());
    let mut steps = 0;
    let mut stopped_early = false;

    while steps < params.steps_per_block {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step: steps,
                value: f64::NAN,
            });
        }
        let before = x.clone();
        adam.step(&mut x, &grad);
        project(&mut x);
        steps += 1;
        let moved = x
            .iter()
            .zip(before.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        let (value, g) = objective.value_and_gradient(&x);
        if !value.is_finite() {
            return Err(Error::Divergence { step: steps, value });
        }
        if value < best_value {
            best_value = value;
            best.assign(&x);
        }
        grad = g;
        if moved <= tol {
            stopped_early = true;
            break;
        }
    }

    Ok(AdamOutcome {
        x: best,
        value: best_value,
        initial_value,
        steps,
        stopped_early,
    })
}
