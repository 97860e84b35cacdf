//! Offline evaluation protocol: ESS diagnostics, bootstrap tests, model selection and the
//! simulation studies that check the protocol itself.

mod cv;
mod validation;
mod whatif;

pub use cv::{cross_validate, cross_validate_with, CvResult, FoldRecord};
pub use validation::{validate_protocol_experiment, PolicyRecord, Setup, SweepPoint, ValidationConfig, ValidationSummary};
pub use whatif::{whatif_diagnostics, WhatIfConfig, WhatIfRow};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::error::{CrmError, Result};
use crate::estimators::{importance_weights, snips, WeightStats};
use crate::policies::StochasticPolicy;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub nu: f64,
    pub delta: f64,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            nu: 0.01,
            delta: 0.05,
            n_boot: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestEstimator {
    Ips,
    Snips,
}

fn point_estimate(kind: TestEstimator, w: &[f64], y: &[f64]) -> Option<f64> {
    match kind {
        TestEstimator::Snips => snips(w, y).ok(),
        TestEstimator::Ips => Some(w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / w.len() as f64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub estimates: Vec<f64>,
    pub skipped: usize,
    /// Two-sided percentile interval at level `1 − δ`.
    pub lower: f64,
    pub upper: f64,
    /// One-sided `1 − δ` upper percentile.
    pub upper_one_sided: f64,
    pub valid: bool,
}

/// Percentile bootstrap of an estimator over rows resampled with replacement. Resamples
/// where the estimator is undefined are skipped; more than half skipped marks the result invalid.
pub fn bootstrap(kind: TestEstimator, weights: &[f64], costs: &[f64], n_boot: usize, delta: f64, seed: u64) -> Bootstrap {
    let n = weights.len();
    let mut rng = stats::rng(seed);
    let mut estimates = Vec::with_capacity(n_boot);
    let mut skipped = 0;
    let mut w = vec![0.0; n];
    let mut y = vec![0.0; n];
    for _ in 0..n_boot {
        for k in 0..n {
            let i = rng.random_range(0..n);
            w[k] = weights[i];
            y[k] = costs[i];
        }
        match point_estimate(kind, &w, &y) {
            Some(v) => estimates.push(v),
            None => skipped += 1,
        }
    }
    let valid = !estimates.is_empty() && 2 * skipped <= n_boot;
    let mut sorted = estimates.clone();
    sorted.sort_by(f64::total_cmp);
    let pct = |q: f64| {
        if sorted.is_empty() {
            f64::NAN
        } else {
            stats::percentile_sorted(&sorted, q)
        }
    };
    Bootstrap {
        lower: pct(delta / 2.0),
        upper: pct(1.0 - delta / 2.0),
        upper_one_sided: pct(1.0 - delta),
        estimates,
        skipped,
        valid,
    }
}

pub fn bootstrap_snips<P: StochasticPolicy>(pm: &P, ds: &LoggedDataset, cfg: &ProtocolConfig) -> Result<Bootstrap> {
    if ds.len() < 30 {
        log::warn!("bootstrapping on only {} rows", ds.len());
    }
    let ws = importance_weights(pm, ds)?;
    Ok(bootstrap(TestEstimator::Snips, &ws.weights, ds.costs(), cfg.n_boot, cfg.delta, cfg.seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub snips_estimate: f64,
    pub ips_estimate: f64,
    pub snips_reward: f64,
    pub ips_reward: f64,
    /// ESS ratio on the validation split.
    pub ess_ratio: f64,
    pub ess_ratio_test: f64,
    pub mean_weight: f64,
    pub max_weight: f64,
    pub valid: bool,
    pub reject_h0: bool,
    /// Two-sided bootstrap percentile interval on the SNIPS cost.
    pub ci: (f64, f64),
    pub upper_bound: f64,
    pub logging_risk: f64,
    pub skipped_resamples: usize,
    pub delta: f64,
    pub nu: f64,
    pub n_boot: usize,
}

/// Decision from precomputed weights on the validation and test splits.
pub fn decide(
    kind: TestEstimator,
    valid_stats: &WeightStats,
    test_stats: &WeightStats,
    test_costs: &[f64],
    logging_risk: f64,
    cfg: &ProtocolConfig,
) -> ProtocolReport {
    let w = &test_stats.weights;
    let snips_estimate = snips(w, test_costs).unwrap_or(f64::NAN);
    let ips_estimate = point_estimate(TestEstimator::Ips, w, test_costs).unwrap_or(f64::NAN);
    let boot = bootstrap(kind, w, test_costs, cfg.n_boot, cfg.delta, cfg.seed);
    let test_value = match kind {
        TestEstimator::Snips => snips_estimate,
        TestEstimator::Ips => ips_estimate,
    };
    let valid = valid_stats.ess_ratio > cfg.nu
        && test_stats.ess_ratio > cfg.nu
        && test_value.is_finite()
        && boot.valid;
    let reject_h0 = valid && boot.upper_one_sided < logging_risk;
    ProtocolReport {
        snips_estimate,
        ips_estimate,
        snips_reward: -snips_estimate,
        ips_reward: -ips_estimate,
        ess_ratio: valid_stats.ess_ratio,
        ess_ratio_test: test_stats.ess_ratio,
        mean_weight: test_stats.mean_weight,
        max_weight: test_stats.max_weight.max(valid_stats.max_weight),
        valid,
        reject_h0,
        ci: (boot.lower, boot.upper),
        upper_bound: boot.upper_one_sided,
        logging_risk,
        skipped_resamples: boot.skipped,
        delta: cfg.delta,
        nu: cfg.nu,
        n_boot: cfg.n_boot,
    }
}

/// Diagnose on `valid`, then test `SNIPS(π) < logging_risk` on `test` with a one-sided
/// bootstrap percentile bound.
pub fn evaluate_protocol<P: StochasticPolicy>(
    pm: &P,
    valid: &LoggedDataset,
    test: &LoggedDataset,
    logging_risk: f64,
    cfg: &ProtocolConfig,
) -> Result<ProtocolReport> {
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) || cfg.n_boot == 0 || !(cfg.nu >= 0.0) {
        return Err(CrmError::Config(format!("invalid protocol settings {cfg:?}")));
    }
    let vs = importance_weights(pm, valid)?;
    let ts = importance_weights(pm, test)?;
    Ok(decide(TestEstimator::Snips, &vs, &ts, test.costs(), logging_risk, cfg))
}
