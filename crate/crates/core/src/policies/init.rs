use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BucketPolicy, Family, MeanModel, PolicyModel};
use crate::embeddings::JointEmbedding;
use crate::error::{CrmError, Result};
use crate::stats;

/// First two moments (and family) of a logging policy's action distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggingDescription {
    pub family: Family,
    pub mean: f64,
    pub std: f64,
}

impl LoggingDescription {
    /// Moments estimated from logged actions.
    pub fn from_actions(actions: &[f64], family: Family) -> Result<Self> {
        if actions.len() < 2 {
            return Err(CrmError::InvalidData("need at least two actions".into()));
        }
        let std = stats::sample_variance(actions).sqrt();
        if !(std > 0.0) {
            return Err(CrmError::InvalidData("logged actions have zero spread".into()));
        }
        Ok(Self {
            family,
            mean: stats::mean(actions),
            std,
        })
    }

    /// Probability mass of each of `m` equal buckets on `[lo, hi]`, renormalized to the range.
    pub fn bucket_masses(&self, lo: f64, hi: f64, m: usize) -> Vec<f64> {
        let cdf = |a: f64| match self.family {
            Family::Normal => stats::std_normal_cdf((a - self.mean) / self.std),
            Family::Lognormal => {
                if a <= 0.0 {
                    0.0
                } else {
                    let (lm, ls) = stats::lognormal_moment_map(self.mean, self.std);
                    stats::std_normal_cdf((a.ln() - lm) / ls)
                }
            }
        };
        let w = (hi - lo) / m as f64;
        let raw: Vec<f64> = (0..m)
            .map(|k| cdf(lo + (k + 1) as f64 * w) - cdf(lo + k as f64 * w))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }

    pub fn bucket_policy(&self, lo: f64, hi: f64, m: usize, dim: usize) -> Result<BucketPolicy> {
        BucketPolicy::new(lo, hi, dim, &self.bucket_masses(lo, hi, m))
    }
}

/// Shape of the mean model to initialize.
#[derive(Debug, Clone)]
pub enum MeanSpec {
    Constant,
    Linear { dim: usize },
    Poly { dim: usize },
    Ccp { embedding: JointEmbedding, gamma: f64 },
}

/// A policy whose mean is (up to `N(0, noise²)` parameter noise) the constant logging mean
/// and whose `σ` is the logging standard deviation.
pub fn init_near_logging(
    logging: &LoggingDescription,
    family: Family,
    spec: MeanSpec,
    seed: u64,
    noise: f64,
) -> Result<PolicyModel> {
    let mut rng = stats::rng(seed);
    let dist = Normal::new(0.0, noise.max(0.0)).map_err(|e| CrmError::Config(e.to_string()))?;
    let mut jitter = |k: usize| -> Vec<f64> { (0..k).map(|_| dist.sample(&mut rng)).collect() };
    let target = match family {
        Family::Normal => logging.mean,
        Family::Lognormal => {
            if logging.mean <= 0.0 {
                return Err(CrmError::Config("lognormal policy needs a positive logging mean".into()));
            }
            stats::softplus_inv(logging.mean)
        }
    };
    let mean = match spec {
        MeanSpec::Constant => MeanModel::Constant { b: target + jitter(1)[0] },
        MeanSpec::Linear { dim } => MeanModel::Linear {
            beta: jitter(dim),
            b: target + jitter(1)[0],
        },
        MeanSpec::Poly { dim } => MeanModel::poly(jitter(dim * dim), dim, target + jitter(1)[0])?,
        MeanSpec::Ccp { embedding, gamma } => {
            let p = embedding.dim();
            MeanModel::ccp(embedding, gamma, jitter(p))?
        }
    };
    PolicyModel::new(family, mean, logging.std.ln())
}

/// `m` grid anchors symmetric about `center`, reaching as far as the observed actions allow.
pub fn centered_anchors(center: f64, actions: &[f64], m: usize) -> Result<Vec<f64>> {
    let lo = actions.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = actions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(center > lo && center < hi) || m == 0 {
        return Err(CrmError::Config(format!(
            "cannot centre {m} anchors on {center} within the action range [{lo}, {hi}]"
        )));
    }
    if m == 1 {
        return Ok(vec![center]);
    }
    let r = (center - lo).min(hi - center);
    Ok((0..m)
        .map(|i| center - r + 2.0 * r * i as f64 / (m - 1) as f64)
        .collect())
}
