use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::stats::dot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-6,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    /// No step along the search direction decreased the objective.
    LineSearchFailed,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub theta: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: SolverStatus,
    /// Objective at every accepted iterate, starting with `θ0`.
    pub history: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// L-BFGS with Armijo backtracking. `f(θ, grad)` returns the value and fills the gradient.
///
/// Trial points where `f` fails or returns a non-finite value are treated as infinitely bad
/// and the step is shortened; failures at `θ0` or non-finite gradients at accepted points
/// are reported as errors.
pub fn minimize<F>(mut f: F, theta0: &[f64], cfg: &LbfgsConfig) -> Result<MinimizeResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let p = theta0.len();
    let mut x = theta0.to_vec();
    let mut g = vec![0.0; p];
    let mut fx = f(&x, &mut g)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(CrmError::NonFinite { theta: x });
    }
    let mut history = vec![fx];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut g_new = vec![0.0; p];
    let mut x_new = vec![0.0; p];

    for iter in 0..cfg.max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= cfg.grad_tol {
            return Ok(done(x, fx, gnorm, iter, SolverStatus::Converged, history));
        }

        let mut d = two_loop(&g, &mem);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            mem.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut t = if mem.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..p {
                x_new[i] = x[i] + t * d[i];
            }
            match f(&x_new, &mut g_new) {
                Ok(v) if v.is_finite() && v <= fx + ARMIJO_C1 * t * slope => {
                    accepted = Some(v);
                    break;
                }
                Ok(_) | Err(CrmError::NonFinite { .. })
                | Err(CrmError::NonFiniteWeight { .. })
                | Err(CrmError::InvalidEstimate(_)) => t *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some(f_new) = accepted else {
            return Ok(done(x, fx, gnorm, iter, SolverStatus::LineSearchFailed, history));
        };
        if g_new.iter().any(|v| !v.is_finite()) {
            return Err(CrmError::NonFinite { theta: x_new });
        }

        let s: Vec<f64> = (0..p).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..p).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if mem.len() == cfg.memory {
                mem.pop_front();
            }
            if cfg.memory > 0 {
                mem.push_back((s, y, 1.0 / sy));
            }
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        history.push(fx);
    }
    let gnorm = dot(&g, &g).sqrt();
    let status = if gnorm <= cfg.grad_tol {
        SolverStatus::Converged
    } else {
        SolverStatus::MaxIterations
    };
    Ok(done(x, fx, gnorm, cfg.max_iter, status, history))
}

fn done(
    theta: Vec<f64>,
    value: f64,
    grad_norm: f64,
    iterations: usize,
    status: SolverStatus,
    history: Vec<f64>,
) -> MinimizeResult {
    MinimizeResult {
        theta,
        value,
        grad_norm,
        iterations,
        status,
        history,
    }
}

fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let c = [1.5, -2.0, 0.25];
        let r = minimize(
            |x, g| {
                for i in 0..3 {
                    g[i] = x[i] - c[i];
                }
                Ok(0.5 * x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            },
            &[10.0, 10.0, -7.0],
            &LbfgsConfig::default(),
        )
        .unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        for i in 0..3 {
            assert!((r.theta[i] - c[i]).abs() < 1e-8);
        }
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let r = minimize(|_, _| Ok(f64::NAN), &[0.0], &LbfgsConfig::default());
        assert!(matches!(r, Err(CrmError::NonFinite { .. })));
    }
}
