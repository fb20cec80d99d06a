//! Gauss-Newton with a matrix-free conjugate-gradient inner solve and Armijo backtracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::config::{CgConfig, RegistrationConfig};
use crate::registration::objective::Objective;
use crate::registration::transform::{DisplacementField, Parametric};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative gradient norm below `tol_grad` (includes an exactly zero gradient).
    GradientTolerance,
    /// Both the objective change and the step fell below their tolerances.
    ObjectiveAndStep,
    /// No trial step changed the objective by more than the objective tolerance.
    Stagnation,
    MaxIterations,
    /// Backtracking exhausted its trials on a direction that should have descended.
    LineSearchFailed,
}

impl StopReason {
    pub fn is_converged(self) -> bool {
        matches!(
            self,
            StopReason::GradientTolerance | StopReason::ObjectiveAndStep | StopReason::Stagnation
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub distance: f64,
    pub regularizer: f64,
    pub gradient_norm: f64,
    pub step_length: f64,
    pub cg_iterations: usize,
    /// Smallest triangle `det ∇y` of the accepted iterate.
    pub min_jacobian_det: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelHistory {
    pub width: usize,
    pub height: usize,
    pub iterations: Vec<IterationRecord>,
    pub stop: StopReason,
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Solves `H x = b` for symmetric positive semi-definite `H` given as a closure.
/// Returns the iterate and the number of iterations performed.
pub fn conjugate_gradient<T: Real>(
    apply: impl Fn(&[T]) -> Vec<T>,
    b: &[T],
    config: &CgConfig,
) -> (Vec<T>, usize) {
    let mut x = vec![T::zero(); b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = T::of(config.relative_residual) * rr.sqrt();
    if rr == T::zero() {
        return (x, 0);
    }
    let mut iterations = 0;
    for _ in 0..config.max_iterations {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            break;
        }
        iterations += 1;
        let a = rr / pap;
        for ((xi, ri), (&pi, &api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += a * pi;
            *ri -= a * api;
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            break;
        }
        let beta = rr_new / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    (x, iterations)
}

/// Minimizes `objective` over the nodal displacement starting from `y0`.
///
/// Every accepted step satisfies the Armijo condition, so the recorded
/// objective never increases. With the hyperelastic energy every accepted
/// iterate has `det ∇y > 0` on all triangles because folded trials evaluate
/// to `+∞` and are rejected by the line search.
pub fn gauss_newton_solve<T: Real>(
    objective: &Objective<'_, T>,
    y0: DisplacementField<T>,
    config: &RegistrationConfig,
) -> Result<(DisplacementField<T>, LevelHistory)> {
    config.validate()?;
    let grid = *y0.grid();
    let mut y = y0;
    let mut eval = objective.evaluate(&y)?;
    if !eval.is_feasible() {
        return Err(Error::Registration(format!(
            "initial guess on the {}x{} level is folded (min det {:.3e})",
            grid.width(),
            grid.height(),
            y.min_jacobian_det().as_f64()
        )));
    }
    let j0 = eval.value;
    let g0 = norm(&eval.gradient);
    let obj_tol = T::of(config.tol_obj) * (T::one() + j0.abs());
    let ls = config.line_search;
    let record = |iteration: usize,
                  e: &crate::registration::objective::ObjectiveEval<T>,
                  y: &DisplacementField<T>,
                  step: T,
                  cg: usize| {
        IterationRecord {
            iteration,
            objective: e.value.as_f64(),
            distance: e.distance.as_f64(),
            regularizer: e.regularizer.as_f64(),
            gradient_norm: norm(&e.gradient).as_f64(),
            step_length: step.as_f64(),
            cg_iterations: cg,
            min_jacobian_det: y.min_jacobian_det().as_f64(),
        }
    };
    let mut history = vec![record(0, &eval, &y, T::zero(), 0)];

    let mut stop = StopReason::MaxIterations;
    for k in 1..=config.max_iterations {
        let gnorm = norm(&eval.gradient);
        if gnorm <= T::of(config.tol_grad) * g0 {
            stop = StopReason::GradientTolerance;
            break;
        }
        let rhs: Vec<T> = eval.gradient.iter().map(|&g| -g).collect();
        let (mut dir, cg_iters) = conjugate_gradient(
            |v| objective.gauss_newton_apply(&eval, &y, v),
            &rhs,
            &config.cg,
        );
        let mut slope = dot(&eval.gradient, &dir);
        if !(slope < T::zero()) {
            dir = rhs;
            slope = -gnorm * gnorm;
        }

        let mut step = T::one();
        let mut accepted = None;
        let mut smallest_change: Option<T> = None;
        for _ in 0..ls.max_trials {
            let trial_values: Vec<T> = y
                .values()
                .iter()
                .zip(&dir)
                .map(|(&u, &d)| u + step * d)
                .collect();
            let trial = y.with_params(trial_values);
            let v = objective.value(&trial)?;
            if v.value.is_finite() {
                let change = (v.value - eval.value).abs();
                smallest_change = Some(smallest_change.map_or(change, |c: T| c.min(change)));
                if v.value <= eval.value + T::of(ls.c) * step * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= T::of(ls.factor);
        }
        let Some(next) = accepted else {
            stop = match smallest_change {
                Some(c) if c <= obj_tol => StopReason::Stagnation,
                _ => StopReason::LineSearchFailed,
            };
            break;
        };

        let step_inf = dir.iter().fold(T::zero(), |m, d| m.max(d.abs())) * step;
        let next_eval = objective.evaluate(&next)?;
        let decrease = eval.value - next_eval.value;
        y = next;
        eval = next_eval;
        history.push(record(k, &eval, &y, step, cg_iters));

        if decrease.abs() <= obj_tol
            && step_inf <= T::of(config.tol_step) * (T::one() + y.max_abs())
        {
            stop = StopReason::ObjectiveAndStep;
            break;
        }
        if k == config.max_iterations {
            stop = if norm(&eval.gradient) <= T::of(config.tol_grad) * g0 {
                StopReason::GradientTolerance
            } else {
                StopReason::MaxIterations
            };
        }
    }
    Ok((
        y,
        LevelHistory {
            width: grid.width(),
            height: grid.height(),
            iterations: history,
            stop,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_spd_system() {
        // tridiagonal [2 -1; -1 2 -1; ...]
        let n = 20;
        let apply = |v: &[f64]| {
            (0..n)
                .map(|i| {
                    let mut s = 2.0 * v[i];
                    if i > 0 {
                        s -= v[i - 1];
                    }
                    if i + 1 < n {
                        s -= v[i + 1];
                    }
                    s
                })
                .collect::<Vec<_>>()
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let cfg = CgConfig {
            relative_residual: 1e-12,
            max_iterations: 100,
        };
        let (x, it) = conjugate_gradient(apply, &b, &cfg);
        let r: Vec<f64> = apply(&x).iter().zip(&b).map(|(a, b)| a - b).collect();
        assert!(norm(&r) < 1e-10);
        assert!(it <= n);
    }

    #[test]
    fn cg_zero_rhs_returns_zero() {
        let (x, it) = conjugate_gradient(|v: &[f64]| v.to_vec(), &[0.0; 4], &CgConfig::default());
        assert_eq!(x, vec![0.0; 4]);
        assert_eq!(it, 0);
    }
}
