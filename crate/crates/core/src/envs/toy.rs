use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::reward_piecewise;
use crate::data::LoggedDataset;
use crate::error::{CrmError, Result};
use crate::stats;

/// Two context clusters (low and high potential) with noisy triangle rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub centers: [[f64; 2]; 2],
    pub cluster_std: f64,
    pub potentials: [f64; 2],
    pub potential_std: f64,
    pub noise_std: f64,
    pub logging_mean: f64,
    pub logging_std: f64,
    pub outlier_action: f64,
    pub outlier_reward: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            centers: [[-1.0, 0.0], [1.0, 0.0]],
            cluster_std: 0.3,
            potentials: [1.0, 3.0],
            potential_std: 0.2,
            noise_std: 1.0,
            logging_mean: 2.0,
            logging_std: 0.5,
            outlier_action: 0.3,
            outlier_reward: 3.0,
        }
    }
}

pub const RHO_LEFT: f64 = 2.0;
pub const RHO_RIGHT: f64 = 1.0;

/// `n` rows of the clipping toy problem; with `outlier`, the last row is replaced by a
/// low-propensity, high-reward sample placed in the low-potential cluster.
pub fn clipping_toy(n: usize, outlier: bool, seed: u64) -> Result<LoggedDataset> {
    clipping_toy_with(&ToyConfig::default(), n, outlier, seed)
}

pub fn clipping_toy_with(cfg: &ToyConfig, n: usize, outlier: bool, seed: u64) -> Result<LoggedDataset> {
    if n < 10 {
        return Err(CrmError::Config(format!("the toy problem needs at least 10 rows, got {n}")));
    }
    let (lm, ls) = stats::lognormal_moment_map(cfg.logging_mean, cfg.logging_std);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| CrmError::Config(e.to_string()))?;
    let mut rng = stats::rng(seed);
    let mut contexts = Vec::with_capacity(2 * n);
    let mut actions = Vec::with_capacity(n);
    let mut props = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    for _ in 0..n {
        let g = usize::from(rng.random::<bool>());
        for c in cfg.centers[g] {
            contexts.push(c + cfg.cluster_std * stats::std_normal(&mut rng));
        }
        let p = cfg.potentials[g] + cfg.potential_std * stats::std_normal(&mut rng);
        let a = (lm + ls * stats::std_normal(&mut rng)).exp();
        actions.push(a);
        props.push(stats::lognormal_pdf(a, lm, ls));
        costs.push(-(reward_piecewise(a, p, RHO_LEFT, RHO_RIGHT) + noise.sample(&mut rng)));
    }
    if outlier {
        let i = n - 1;
        contexts[2 * i..2 * i + 2].copy_from_slice(&cfg.centers[0]);
        actions[i] = cfg.outlier_action;
        props[i] = stats::lognormal_pdf(cfg.outlier_action, lm, ls);
        costs[i] = -cfg.outlier_reward;
    }
    LoggedDataset::new(contexts, 2, actions, props, costs)
}
