use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Environment, Scenario};
use crate::error::{CrmError, Result};
use crate::policies::{Family, LoggingDescription};
use crate::stats::{self, Rng};

/// Triangle reward peaked at `a = p`, reaching zero `ρ_left` below and `ρ_right` above.
pub fn reward_piecewise(a: f64, p: f64, rho_left: f64, rho_right: f64) -> f64 {
    if a <= p {
        (1.0 - (p - a) / rho_left).max(0.0)
    } else {
        (1.0 - (a - p) / rho_right).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    Noisymoons,
    Noisycircles,
    Anisotropic,
}

impl std::str::FromStr for PotentialKind {
    type Err = CrmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noisymoons" => Ok(Self::Noisymoons),
            "noisycircles" => Ok(Self::Noisycircles),
            "anisotropic" => Ok(Self::Anisotropic),
            _ => Err(CrmError::Config(format!("unknown environment {s:?}"))),
        }
    }
}

const ANISO_CENTERS: [[f64; 2]; 3] = [[-2.0, -1.0], [0.0, 1.5], [2.0, -1.0]];
const ANISO_SHEAR: [[f64; 2]; 2] = [[0.6, -0.6], [-0.4, 0.8]];

/// Clustered 2-D contexts whose hidden group sets a Gaussian potential; reward peaks at the potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialEnv {
    pub kind: PotentialKind,
    pub group_means: Vec<f64>,
    pub potential_std: f64,
    pub rho_left: f64,
    pub rho_right: f64,
    pub context_noise: f64,
    pub logging_std: f64,
}

impl PotentialEnv {
    pub fn new(kind: PotentialKind) -> Self {
        let group_means = match kind {
            PotentialKind::Anisotropic => vec![1.0, 2.0, 3.0],
            _ => vec![1.0, 2.0],
        };
        Self {
            kind,
            group_means,
            potential_std: 0.3,
            rho_left: 2.0,
            rho_right: 1.0,
            context_noise: 0.1,
            logging_std: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let groups = if self.kind == PotentialKind::Anisotropic { 3 } else { 2 };
        if self.group_means.len() != groups {
            return Err(CrmError::Config(format!(
                "{:?} needs {groups} group means, got {}",
                self.kind,
                self.group_means.len()
            )));
        }
        if !(self.rho_left > 0.0 && self.rho_right > 0.0 && self.potential_std > 0.0 && self.logging_std > 0.0) {
            return Err(CrmError::Config("reward widths and standard deviations must be positive".into()));
        }
        if self.logging_mean() <= 0.0 {
            return Err(CrmError::Config("lognormal logging needs a positive mean potential".into()));
        }
        Ok(())
    }

    pub fn logging_mean(&self) -> f64 {
        stats::mean(&self.group_means)
    }

    fn logging_params(&self) -> (f64, f64) {
        stats::lognormal_moment_map(self.logging_mean(), self.logging_std)
    }

    fn draw_context(&self, g: usize, rng: &mut Rng) -> Vec<f64> {
        let eps = self.context_noise;
        match self.kind {
            PotentialKind::Noisymoons => {
                let t = rng.random::<f64>() * std::f64::consts::PI;
                let (x, y) = if g == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                vec![x + eps * stats::std_normal(rng), y + eps * stats::std_normal(rng)]
            }
            PotentialKind::Noisycircles => {
                let t = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
                let r = if g == 0 { 1.0 } else { 0.5 };
                vec![
                    r * t.cos() + eps * stats::std_normal(rng),
                    r * t.sin() + eps * stats::std_normal(rng),
                ]
            }
            PotentialKind::Anisotropic => {
                let z0 = stats::std_normal(rng);
                let z1 = stats::std_normal(rng);
                let c = ANISO_CENTERS[g];
                vec![
                    c[0] + z0 * ANISO_SHEAR[0][0] + z1 * ANISO_SHEAR[1][0],
                    c[1] + z0 * ANISO_SHEAR[0][1] + z1 * ANISO_SHEAR[1][1],
                ]
            }
        }
    }
}

impl Environment for PotentialEnv {
    fn context_dim(&self) -> usize {
        2
    }

    fn draw_scenarios(&self, n: usize, rng: &mut Rng) -> Vec<Scenario> {
        let groups = self.group_means.len();
        (0..n)
            .map(|_| {
                let g = rng.random_range(0..groups);
                let context = self.draw_context(g, rng);
                let p = Normal::new(self.group_means[g], self.potential_std)
                    .expect("validated std")
                    .sample(rng);
                Scenario { context, latent: p, group: g }
            })
            .collect()
    }

    fn cost(&self, a: f64, s: &Scenario) -> f64 {
        -reward_piecewise(a, s.latent, self.rho_left, self.rho_right)
    }

    fn logging_sample(&self, _s: &Scenario, rng: &mut Rng) -> f64 {
        let (m, sd) = self.logging_params();
        (m + sd * stats::std_normal(rng)).exp()
    }

    fn logging_density(&self, _s: &Scenario, a: f64) -> f64 {
        let (m, sd) = self.logging_params();
        stats::lognormal_pdf(a, m, sd)
    }

    fn logging_description(&self) -> LoggingDescription {
        LoggingDescription {
            family: Family::Lognormal,
            mean: self.logging_mean(),
            std: self.logging_std,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_shape() {
        assert_eq!(reward_piecewise(1.3, 1.3, 2.0, 1.0), 1.0);
        assert_eq!(reward_piecewise(2.5, 1.5, 2.0, 1.0), 0.0);
        assert!((reward_piecewise(0.3, 1.3, 2.0, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(reward_piecewise(-5.0, 1.3, 2.0, 1.0), 0.0);
    }

    #[test]
    fn group_counts_by_kind() {
        assert_eq!(PotentialEnv::new(PotentialKind::Noisymoons).group_means.len(), 2);
        assert_eq!(PotentialEnv::new(PotentialKind::Anisotropic).group_means.len(), 3);
        assert!("spirals".parse::<PotentialKind>().is_err());
    }
}
