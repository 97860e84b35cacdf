use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::embeddings::JointEmbedding;
use crate::error::{CrmError, Result};
use crate::policies::{Family, MeanModel, PolicyModel, StochasticPolicy};
use crate::stats;

/// Ridge regression of costs on the joint embedding `ψ(x, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPredictor {
    pub embedding: JointEmbedding,
    pub beta: Vec<f64>,
    pub ridge: f64,
}

impl CostPredictor {
    pub fn fit(ds: &LoggedDataset, embedding: JointEmbedding, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0) {
            return Err(CrmError::Config(format!("ridge penalty must be nonnegative, got {ridge}")));
        }
        let p = embedding.dim();
        if ds.len() < p {
            log::warn!("fitting {p} cost-model coefficients on only {} rows", ds.len());
        }
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DVector::<f64>::zeros(p);
        for i in 0..ds.len() {
            let phi = embedding.embed(ds.context(i), &[ds.actions()[i]])?;
            let y = ds.costs()[i];
            for r in 0..p {
                rhs[r] += phi[r] * y;
                for c in 0..=r {
                    gram[(r, c)] += phi[r] * phi[c];
                }
            }
        }
        for r in 0..p {
            for c in r + 1..p {
                gram[(r, c)] = gram[(c, r)];
            }
            gram[(r, r)] += ridge;
        }
        let jitter = 1e-10 * gram.trace() / p as f64;
        for r in 0..p {
            gram[(r, r)] += jitter;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| CrmError::Singular("ridge normal equations are not positive definite".into()))?;
        let beta = chol.solve(&rhs);
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(CrmError::Singular("ridge solution is not finite".into()));
        }
        Ok(Self {
            embedding,
            beta: beta.iter().copied().collect(),
            ridge,
        })
    }

    pub fn predict(&self, x: &[f64], a: f64) -> f64 {
        let phi = self.embedding.embed(x, &[a]).expect("context dimension checked by caller");
        stats::dot(&self.beta, &phi)
    }

    /// Anchor with the lowest predicted cost; ties resolve to the smallest action.
    pub fn argmin(&self, x: &[f64], anchors: &[f64]) -> f64 {
        let mut best = (f64::INFINITY, f64::INFINITY);
        for &a in anchors {
            let v = self.predict(x, a);
            if v < best.0 || (v == best.0 && a < best.1) {
                best = (v, a);
            }
        }
        best.1
    }
}

/// Greedy policy on `cp` over `anchors`, wrapped in `N(·, σ_dm²)`.
pub fn dm_policy(cp: CostPredictor, anchors: Vec<f64>, sigma_dm: f64) -> Result<PolicyModel> {
    if anchors.is_empty() {
        return Err(CrmError::Config("direct method needs at least one anchor".into()));
    }
    if !(sigma_dm > 0.0) {
        return Err(CrmError::Config(format!("σ_dm must be positive, got {sigma_dm}")));
    }
    PolicyModel::new(
        Family::Normal,
        MeanModel::Greedy {
            predictor: cp,
            anchors,
        },
        sigma_dm.ln(),
    )
}

/// Direct-method risk estimate: the cost model averaged over `k` policy draws per row.
pub fn dm_estimate<P: StochasticPolicy>(cp: &CostPredictor, pm: &P, ds: &LoggedDataset, k: usize, seed: u64) -> f64 {
    let mut total = 0.0;
    for i in 0..ds.len() {
        let mut rng = stats::rng(stats::derive_seed(seed, i as u64));
        let x = ds.context(i);
        total += pm.sample_many(x, k, &mut rng).iter().map(|&a| cp.predict(x, a)).sum::<f64>() / k as f64;
    }
    total / ds.len() as f64
}
