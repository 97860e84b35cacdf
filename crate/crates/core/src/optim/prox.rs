use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{minimize, LbfgsConfig, SolverStatus};
use crate::data::LoggedDataset;
use crate::error::Result;
use crate::estimators::{objective_value_grad, CrmObjective};
use crate::policies::StochasticPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxConfig {
    pub kappa: f64,
    pub outer_iters: usize,
    pub inner: LbfgsConfig,
    pub seed: u64,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self {
            kappa: 0.0,
            outer_iters: 10,
            inner: LbfgsConfig::default(),
            seed: 0,
        }
    }
}

impl ProxConfig {
    /// A single unregularized solve.
    pub fn plain(inner: LbfgsConfig) -> Self {
        Self {
            kappa: 0.0,
            outer_iters: 1,
            inner,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    pub theta: Vec<f64>,
    pub initial_objective: f64,
    /// Unregularized objective after each outer iteration.
    pub trace: Vec<f64>,
    pub statuses: Vec<SolverStatus>,
    pub inner_iterations: Vec<usize>,
    pub wall_time_secs: f64,
}

impl TrainResult {
    pub fn final_objective(&self) -> f64 {
        self.trace.last().copied().unwrap_or(self.initial_objective)
    }
}

/// Proximal point iterations `θ_k ≈ argmin L(θ) + κ/2 ‖θ − θ_{k−1}‖²`, the last one with `κ = 0`,
/// each warm-started at the previous iterate.
pub fn proximal_train<P: StochasticPolicy>(
    pm0: &P,
    ds: &LoggedDataset,
    obj: &CrmObjective,
    cfg: &ProxConfig,
) -> Result<TrainResult> {
    let start = Instant::now();
    obj.validate()?;
    let outer = cfg.outer_iters.max(1);
    let initial_objective = objective_value_grad(pm0, ds, obj)?.0;
    let mut theta = pm0.params();
    let mut trace = Vec::with_capacity(outer);
    let mut statuses = Vec::with_capacity(outer);
    let mut inner_iterations = Vec::with_capacity(outer);
    let mut work = pm0.clone();

    for k in 0..outer {
        let kappa = if k + 1 == outer { 0.0 } else { cfg.kappa };
        let center = theta.clone();
        let res = minimize(
            |th, g| {
                work.set_params(th);
                let (v, grad) = objective_value_grad(&work, ds, obj)?;
                g.copy_from_slice(&grad);
                let mut reg = 0.0;
                if kappa > 0.0 {
                    for i in 0..th.len() {
                        let dlt = th[i] - center[i];
                        reg += dlt * dlt;
                        g[i] += kappa * dlt;
                    }
                }
                Ok(v + 0.5 * kappa * reg)
            },
            &center,
            &cfg.inner,
        );
        match res {
            Ok(r) => {
                theta = r.theta;
                work.set_params(&theta);
                trace.push(objective_value_grad(&work, ds, obj)?.0);
                statuses.push(r.status);
                inner_iterations.push(r.iterations);
            }
            Err(e) => {
                log::warn!("outer iteration {k} failed: {e}");
                statuses.push(SolverStatus::Failed(e.to_string()));
                break;
            }
        }
    }
    Ok(TrainResult {
        theta,
        initial_objective,
        trace,
        statuses,
        inner_iterations,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
