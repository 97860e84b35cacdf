use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::StochasticPolicy;
use crate::error::{CrmError, Result};
use crate::stats::{self, Rng};

/// Piecewise-uniform density over `m` equal-width buckets of `[lo, hi]`, with bucket
/// probabilities given by a softmax whose logits are linear in `[x, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketPolicy {
    pub lo: f64,
    pub hi: f64,
    pub m: usize,
    pub dim: usize,
    /// Row-major `m × (dim + 1)`; the last column is the intercept.
    pub weights: Vec<f64>,
}

impl BucketPolicy {
    /// Intercepts set to the log bucket masses of a reference distribution.
    pub fn new(lo: f64, hi: f64, dim: usize, masses: &[f64]) -> Result<Self> {
        let m = masses.len();
        if m == 0 || !(hi > lo) {
            return Err(CrmError::Config(format!(
                "need at least one bucket over a nonempty range, got {m} on [{lo}, {hi}]"
            )));
        }
        let mut weights = vec![0.0; m * (dim + 1)];
        for (k, &p) in masses.iter().enumerate() {
            weights[k * (dim + 1) + dim] = p.max(1e-300).ln();
        }
        Ok(Self { lo, hi, m, dim, weights })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.m as f64
    }

    pub fn bucket(&self, a: f64) -> Option<usize> {
        if !(a >= self.lo && a <= self.hi) {
            return None;
        }
        Some((((a - self.lo) / self.width()) as usize).min(self.m - 1))
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let p = self.dim + 1;
        let logits: Vec<f64> = (0..self.m)
            .map(|k| stats::dot(&self.weights[k * p..k * p + self.dim], x) + self.weights[k * p + self.dim])
            .collect();
        super::softmax(&logits)
    }

    fn chain(&self, x: &[f64], dz: &[f64], grad: &mut [f64]) {
        let p = self.dim + 1;
        for k in 0..self.m {
            for l in 0..self.dim {
                grad[k * p + l] = dz[k] * x[l];
            }
            grad[k * p + self.dim] = dz[k];
        }
    }
}

impl StochasticPolicy for BucketPolicy {
    fn n_params(&self) -> usize {
        self.weights.len()
    }

    fn params(&self) -> Vec<f64> {
        self.weights.clone()
    }

    fn set_params(&mut self, theta: &[f64]) {
        self.weights.copy_from_slice(theta);
    }

    fn n_mean_params(&self) -> usize {
        self.weights.len()
    }

    fn log_density(&self, x: &[f64], a: f64) -> f64 {
        match self.bucket(a) {
            Some(k) => self.probabilities(x)[k].ln() - self.width().ln(),
            None => f64::NEG_INFINITY,
        }
    }

    fn log_density_grad(&self, x: &[f64], a: f64, grad: &mut [f64]) -> f64 {
        let Some(k) = self.bucket(a) else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NEG_INFINITY;
        };
        let probs = self.probabilities(x);
        let dz: Vec<f64> = (0..self.m)
            .map(|j| f64::from(u8::from(j == k)) - probs[j])
            .collect();
        self.chain(x, &dz, grad);
        probs[k].ln() - self.width().ln()
    }

    fn entropy(&self, x: &[f64]) -> f64 {
        let probs = self.probabilities(x);
        self.width().ln() - probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    fn entropy_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let probs = self.probabilities(x);
        let lp: Vec<f64> = probs.iter().map(|&p| if p > 0.0 { p.ln() } else { 0.0 }).collect();
        let plogp: f64 = probs.iter().zip(&lp).map(|(p, l)| p * l).sum();
        let dz: Vec<f64> = (0..self.m).map(|j| -probs[j] * (lp[j] - plogp)).collect();
        self.chain(x, &dz, grad);
        self.width().ln() - plogp
    }

    fn sample(&self, x: &[f64], rng: &mut Rng) -> f64 {
        self.sample_many(x, 1, rng)[0]
    }

    fn sample_many(&self, x: &[f64], k: usize, rng: &mut Rng) -> Vec<f64> {
        let probs = self.probabilities(x);
        let w = self.width();
        (0..k)
            .map(|_| {
                let mut r = rng.random::<f64>();
                let mut b = self.m - 1;
                for (j, &p) in probs.iter().enumerate() {
                    if r < p {
                        b = j;
                        break;
                    }
                    r -= p;
                }
                self.lo + (b as f64 + rng.random::<f64>()) * w
            })
            .collect()
    }
}
