//! Limited-memory BFGS ascent with Armijo backtracking.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::math::{dot, max_abs};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct AscentOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub initial_step: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial point.
    pub trace: Vec<f64>,
    /// Trial points at which the objective could not be evaluated.
    pub failed_evaluations: usize,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const MIN_STEP: f64 = 1e-14;
const MEMORY: usize = 10;
const VALUE_NOISE: f64 = 1e-12;
const WOLFE_DELTA: f64 = 0.1;
const WOLFE_SIGMA: f64 = 0.9;

/// L-BFGS ascent direction from the stored curvature pairs `(s, y)`, with
/// `y` the change in the negated gradient.
fn direction(grad: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}

/// Maximizes `eval`, which returns `(value, gradient)` or `None` when the
/// objective is unavailable at a point (the step is then halved).
///
/// Limited-memory BFGS with Armijo backtracking. The first step, and any
/// step after the curvature memory is reset, moves `initial_step` along the
/// gradient.
pub(crate) fn maximize<F>(x0: Vec<f64>, opts: &AscentOptions, mut eval: F) -> Result<AscentResult>
where
    F: FnMut(&[f64]) -> Result<Option<(f64, Vec<f64>)>>,
{
    let (mut value, mut grad) = eval(&x0)?
        .ok_or_else(|| Error::Degenerate("objective unavailable at the initial point".into()))?;
    let mut x = x0;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut trace = alloc::vec![value];
    let mut failed = 0;
    let mut iterations = 0;
    let mut converged = max_abs(&grad) <= opts.grad_tol;
    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let (dir, mut step) = if pairs.is_empty() {
            (grad.clone(), opts.initial_step)
        } else {
            let d = direction(&grad, &pairs);
            if dot(&d, &grad) > 0.0 {
                (d, 1.0)
            } else {
                pairs.clear();
                (grad.clone(), opts.initial_step)
            }
        };
        let slope = dot(&dir, &grad);
        let slack = 4.0 * f64::EPSILON * (1.0 + value.abs());
        let noise = VALUE_NOISE * (1.0 + value.abs());
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            match eval(&trial)? {
                Some((v, g)) if v.is_finite() && v + slack >= value + ARMIJO * step * slope => {
                    accepted = Some((trial, v, g));
                    break;
                }
                // near the optimum the value stops resolving progress; fall back on
                // the directional derivative, as in an approximate Wolfe test
                Some((v, g))
                    if v.is_finite() && v >= value - noise && {
                        let d = dot(&dir, &g);
                        d >= -(1.0 - 2.0 * WOLFE_DELTA) * slope && d <= WOLFE_SIGMA * slope
                    } =>
                {
                    accepted = Some((trial, v, g));
                    break;
                }
                Some(_) => {}
                None => failed += 1,
            }
            step *= 0.5;
            if step < MIN_STEP {
                break;
            }
        }
        let Some((x_new, v_new, g_new)) = accepted else {
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
            continue;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if pairs.len() == MEMORY {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        value = v_new.max(value);
        grad = g_new;
        trace.push(v_new);
        converged = max_abs(&grad) <= opts.grad_tol;
    }
    Ok(AscentResult {
        grad_norm: max_abs(&grad),
        x,
        value,
        iterations,
        converged,
        trace,
        failed_evaluations: failed,
    })
}
