use serde::{Deserialize, Serialize};

use super::{bootstrap, TestEstimator};
use crate::error::{CrmError, Result};
use crate::estimators::WeightStats;
use crate::stats;

/// `d` i.i.d. coordinates logged from `logN(λ0, σ0)` (log-space parameters); targets are
/// `N(μ, σ)` per coordinate and the quantity estimated is `E[max_j X_j]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhatIfConfig {
    pub d: usize,
    pub lambda0: f64,
    pub sigma0: f64,
    pub sigma: f64,
    pub n_boot: usize,
    pub delta: f64,
}

impl Default for WhatIfConfig {
    fn default() -> Self {
        Self {
            d: 3,
            lambda0: 1.0,
            sigma0: 0.5,
            sigma: 0.5,
            n_boot: 100,
            delta: 0.05,
        }
    }
}

impl WhatIfConfig {
    pub fn logging_mode(&self) -> f64 {
        (self.lambda0 - self.sigma0 * self.sigma0).exp()
    }

    pub fn logging_sd(&self) -> f64 {
        let s2 = self.sigma0 * self.sigma0;
        ((s2.exp() - 1.0) * (2.0 * self.lambda0 + s2).exp()).sqrt()
    }

    /// `points` values spanning the logging mode ± `half_width` logging standard deviations.
    pub fn grid(&self, half_width: f64, points: usize) -> Vec<f64> {
        let (m, sd) = (self.logging_mode(), self.logging_sd());
        (0..points)
            .map(|i| m + sd * half_width * (2.0 * i as f64 / (points - 1) as f64 - 1.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfRow {
    pub mu: f64,
    pub ess_ratio: f64,
    pub mean_weight: f64,
    pub mean_weight_se: f64,
    pub estimate: f64,
    pub ci_width: f64,
}

pub fn whatif_diagnostics(mu_grid: &[f64], n: usize, seed: u64, cfg: &WhatIfConfig) -> Result<Vec<WhatIfRow>> {
    if mu_grid.is_empty() || n < 2 || cfg.d == 0 {
        return Err(CrmError::Config("what-if needs a nonempty grid, n >= 2 and d >= 1".into()));
    }
    let mut rng = stats::rng(seed);
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..cfg.d)
                .map(|_| (cfg.lambda0 + cfg.sigma0 * stats::std_normal(&mut rng)).exp())
                .collect()
        })
        .collect();
    let log_q: Vec<f64> = draws
        .iter()
        .map(|x| x.iter().map(|&v| stats::lognormal_logpdf(v, cfg.lambda0, cfg.sigma0)).sum())
        .collect();
    let target: Vec<f64> = draws
        .iter()
        .map(|x| x.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();

    Ok(mu_grid
        .iter()
        .enumerate()
        .map(|(k, &mu)| {
            let weights: Vec<f64> = draws
                .iter()
                .zip(&log_q)
                .map(|(x, lq)| {
                    let lp: f64 = x.iter().map(|&v| stats::normal_logpdf(v, mu, cfg.sigma)).sum();
                    (lp - lq).exp()
                })
                .collect();
            let se = (stats::sample_variance(&weights) / n as f64).sqrt();
            let ws = WeightStats::from_weights(weights);
            let boot = bootstrap(
                TestEstimator::Snips,
                &ws.weights,
                &target,
                cfg.n_boot,
                cfg.delta,
                stats::derive_seed(seed, k as u64),
            );
            WhatIfRow {
                mu,
                ess_ratio: ws.ess_ratio,
                mean_weight: ws.mean_weight,
                mean_weight_se: se,
                estimate: crate::estimators::snips(&ws.weights, &target).unwrap_or(f64::NAN),
                ci_width: boot.upper - boot.lower,
            }
        })
        .collect())
}
