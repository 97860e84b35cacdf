use serde::{Deserialize, Serialize};

use super::{Environment, Scenario};
use crate::error::{CrmError, Result};
use crate::policies::{Family, LoggingDescription};
use crate::stats::{self, Rng};

/// Cost of dosing `a` when the therapeutic dose is `t_star`: zero within 10%, linear outside.
pub fn warfarin_cost(a: f64, t_star: f64) -> f64 {
    ((a - t_star).abs() - 0.1 * t_star).max(0.0)
}

/// Simulated dosing: contexts are `[z_bmi, z_rest]`, the therapeutic dose mixes both, and the
/// logging policy only sees the BMI score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarfarinSim {
    pub mu_t: f64,
    pub sigma_t: f64,
    pub theta: f64,
}

impl Default for WarfarinSim {
    fn default() -> Self {
        Self {
            mu_t: 35.0,
            sigma_t: 10.0,
            theta: 0.5,
        }
    }
}

const MIN_DOSE: f64 = 1.0;

impl WarfarinSim {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_t > 0.0) {
            return Err(CrmError::Config("σ_T must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(CrmError::Config(format!(
                "θ must lie in [0, 1); θ = {} leaves no logging noise",
                self.theta
            )));
        }
        Ok(())
    }

    /// Mean and standard deviation of the (untruncated) logging normal at a context.
    pub fn logging_moments(&self, z_bmi: f64) -> (f64, f64) {
        (
            self.mu_t + self.sigma_t * self.theta.sqrt() * z_bmi,
            self.sigma_t * (1.0 - self.theta).sqrt(),
        )
    }
}

impl Environment for WarfarinSim {
    fn context_dim(&self) -> usize {
        2
    }

    fn draw_scenarios(&self, n: usize, rng: &mut Rng) -> Vec<Scenario> {
        (0..n)
            .map(|_| {
                let zb = stats::std_normal(rng);
                let zr = stats::std_normal(rng);
                let t = self.mu_t + self.sigma_t * (self.theta.sqrt() * zb + (1.0 - self.theta).sqrt() * zr);
                Scenario {
                    context: vec![zb, zr],
                    latent: t.max(MIN_DOSE),
                    group: 0,
                }
            })
            .collect()
    }

    fn cost(&self, a: f64, s: &Scenario) -> f64 {
        warfarin_cost(a, s.latent)
    }

    /// Normal draw conditioned on a positive dose.
    fn logging_sample(&self, s: &Scenario, rng: &mut Rng) -> f64 {
        let (m, sd) = self.logging_moments(s.context[0]);
        loop {
            let a = m + sd * stats::std_normal(rng);
            if a > 0.0 {
                return a;
            }
        }
    }

    fn logging_density(&self, s: &Scenario, a: f64) -> f64 {
        if a <= 0.0 {
            return 0.0;
        }
        let (m, sd) = self.logging_moments(s.context[0]);
        stats::normal_pdf(a, m, sd) / stats::std_normal_cdf(m / sd)
    }

    fn logging_description(&self) -> LoggingDescription {
        LoggingDescription {
            family: Family::Normal,
            mean: self.mu_t,
            std: self.sigma_t,
        }
    }
}
