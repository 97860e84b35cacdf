//! Synthetic and semi-synthetic environments with known cost functions.

mod potential;
mod toy;
mod warfarin;

pub use potential::{reward_piecewise, PotentialEnv, PotentialKind};
pub use toy::{clipping_toy, ToyConfig};
pub use warfarin::{warfarin_cost, WarfarinSim};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::error::Result;
use crate::policies::{LoggingDescription, StochasticPolicy};
use crate::stats::{self, Rng};

/// One draw of the world: the observed context and the hidden quantity the cost depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub context: Vec<f64>,
    pub latent: f64,
    pub group: usize,
}

pub trait Environment: Sync {
    fn context_dim(&self) -> usize;
    fn draw_scenarios(&self, n: usize, rng: &mut Rng) -> Vec<Scenario>;
    fn cost(&self, a: f64, s: &Scenario) -> f64;
    fn logging_sample(&self, s: &Scenario, rng: &mut Rng) -> f64;
    fn logging_density(&self, s: &Scenario, a: f64) -> f64;
    /// Marginal moments of the logging action distribution.
    fn logging_description(&self) -> LoggingDescription;
}

/// Logged dataset drawn from the environment's logging policy, with the hidden scenarios.
pub fn generate<E: Environment + ?Sized>(env: &E, n: usize, seed: u64) -> Result<(LoggedDataset, Vec<Scenario>)> {
    let mut rng = stats::rng(seed);
    let scenarios = env.draw_scenarios(n, &mut rng);
    let mut contexts = Vec::with_capacity(n * env.context_dim());
    let mut actions = Vec::with_capacity(n);
    let mut props = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    for s in &scenarios {
        let a = env.logging_sample(s, &mut rng);
        contexts.extend_from_slice(&s.context);
        actions.push(a);
        props.push(env.logging_density(s, a));
        costs.push(env.cost(a, s));
    }
    let ds = LoggedDataset::new(contexts, env.context_dim(), actions, props, costs)?;
    Ok((ds, scenarios))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineRisk {
    pub mean: f64,
    pub std_error: f64,
}

impl OnlineRisk {
    pub fn reward(&self) -> f64 {
        -self.mean
    }
}

/// Monte Carlo risk of `policy` on `n_contexts` fresh scenarios.
pub fn online_risk<P, E>(policy: &P, env: &E, n_contexts: usize, samples_per_context: usize, seed: u64) -> OnlineRisk
where
    P: StochasticPolicy,
    E: Environment + ?Sized,
{
    let scenarios = env.draw_scenarios(n_contexts, &mut stats::rng(stats::derive_seed(seed, u64::MAX)));
    online_risk_on(policy, env, &scenarios, samples_per_context, seed)
}

/// Monte Carlo risk on given scenarios; the standard error is taken over per-context means.
pub fn online_risk_on<P, E>(policy: &P, env: &E, scenarios: &[Scenario], samples_per_context: usize, seed: u64) -> OnlineRisk
where
    P: StochasticPolicy,
    E: Environment + ?Sized,
{
    let per_context: Vec<f64> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stats::rng(stats::derive_seed(seed, i as u64));
            let acts = policy.sample_many(&s.context, samples_per_context, &mut rng);
            acts.iter().map(|&a| env.cost(a, s)).sum::<f64>() / samples_per_context as f64
        })
        .collect();
    let n = per_context.len() as f64;
    let std_error = if per_context.len() > 1 {
        (stats::sample_variance(&per_context) / n).sqrt()
    } else {
        0.0
    };
    OnlineRisk {
        mean: stats::mean(&per_context),
        std_error,
    }
}
