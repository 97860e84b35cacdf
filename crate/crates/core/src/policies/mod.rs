//! Stochastic continuous-action policies.

mod bucket;
mod init;

pub use bucket::BucketPolicy;
pub use init::{centered_anchors, init_near_logging, LoggingDescription, MeanSpec};

use serde::{Deserialize, Serialize};

use crate::embeddings::{ContextMap, JointEmbedding};
use crate::error::{CrmError, Result};
use crate::estimators::CostPredictor;
use crate::stats::{self, Rng};

/// Anything that can be trained by the CRM objective: a parametrized density over scalar actions.
pub trait StochasticPolicy: Clone + Send + Sync {
    fn n_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, theta: &[f64]);
    /// Leading parameters subject to ℓ2 regularization.
    fn n_mean_params(&self) -> usize;
    fn log_density(&self, x: &[f64], a: f64) -> f64;
    /// Writes `∇_θ log π(a|x)` into `grad` and returns the log-density.
    fn log_density_grad(&self, x: &[f64], a: f64, grad: &mut [f64]) -> f64;
    fn entropy(&self, x: &[f64]) -> f64;
    /// Writes `∇_θ H(π(·|x))` into `grad` and returns the entropy.
    fn entropy_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
    fn sample(&self, x: &[f64], rng: &mut Rng) -> f64;

    fn sample_many(&self, x: &[f64], k: usize, rng: &mut Rng) -> Vec<f64> {
        (0..k).map(|_| self.sample(x, rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    Lognormal,
}

impl std::str::FromStr for Family {
    type Err = CrmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "lognormal" => Ok(Self::Lognormal),
            _ => Err(CrmError::Config(format!("unknown family {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanKind {
    Constant,
    Linear,
    Poly,
    Ccp,
    Greedy,
}

impl std::str::FromStr for MeanKind {
    type Err = CrmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "linear" => Ok(Self::Linear),
            "poly" => Ok(Self::Poly),
            "ccp" => Ok(Self::Ccp),
            "greedy" => Ok(Self::Greedy),
            _ => Err(CrmError::Config(format!("unknown mean model {s:?}"))),
        }
    }
}

pub const MAX_POLY_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum MeanModel {
    Constant {
        b: f64,
    },
    Linear {
        beta: Vec<f64>,
        b: f64,
    },
    /// `xᵀ B x + b` with `B` stored row-major.
    Poly {
        b_mat: Vec<f64>,
        dim: usize,
        b: f64,
    },
    /// Soft-argmin over anchors of `η(x, a) = ⟨β, ψ(x, a)⟩`.
    Ccp {
        embedding: JointEmbedding,
        gamma: f64,
        beta: Vec<f64>,
        /// `ψ_A(a_i)` for every anchor, row-major `m × m`.
        anchor_feats: Vec<f64>,
    },
    /// Greedy minimizer of a fitted cost model over a fixed set of anchors.
    Greedy {
        predictor: CostPredictor,
        anchors: Vec<f64>,
    },
}

impl MeanModel {
    pub fn ccp(embedding: JointEmbedding, gamma: f64, beta: Vec<f64>) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(CrmError::Config(format!("temperature must be positive, got {gamma}")));
        }
        if embedding.action.dim != 1 {
            return Err(CrmError::Config("policy anchors must be scalar actions".into()));
        }
        if beta.len() != embedding.dim() {
            return Err(CrmError::Dimension {
                expected: embedding.dim(),
                got: beta.len(),
            });
        }
        let m = embedding.action.m();
        let anchor_feats = (0..m)
            .flat_map(|i| embedding.action.embed(embedding.action.anchor(i)))
            .collect();
        Ok(Self::Ccp {
            embedding,
            gamma,
            beta,
            anchor_feats,
        })
    }

    pub fn poly(b_mat: Vec<f64>, dim: usize, b: f64) -> Result<Self> {
        if dim > MAX_POLY_DIM {
            return Err(CrmError::Config(format!(
                "poly mean model supports at most {MAX_POLY_DIM} context dimensions, got {dim}"
            )));
        }
        if b_mat.len() != dim * dim {
            return Err(CrmError::Dimension {
                expected: dim * dim,
                got: b_mat.len(),
            });
        }
        Ok(Self::Poly { b_mat, dim, b })
    }

    pub fn kind(&self) -> MeanKind {
        match self {
            Self::Constant { .. } => MeanKind::Constant,
            Self::Linear { .. } => MeanKind::Linear,
            Self::Poly { .. } => MeanKind::Poly,
            Self::Ccp { .. } => MeanKind::Ccp,
            Self::Greedy { .. } => MeanKind::Greedy,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Self::Constant { .. } => 1,
            Self::Linear { beta, .. } => beta.len() + 1,
            Self::Poly { b_mat, .. } => b_mat.len() + 1,
            Self::Ccp { beta, .. } => beta.len(),
            Self::Greedy { .. } => 0,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Self::Constant { b } => vec![*b],
            Self::Linear { beta, b } | Self::Poly { b_mat: beta, b, .. } => {
                let mut v = beta.clone();
                v.push(*b);
                v
            }
            Self::Ccp { beta, .. } => beta.clone(),
            Self::Greedy { .. } => Vec::new(),
        }
    }

    pub fn set_params(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.n_params());
        match self {
            Self::Constant { b } => *b = theta[0],
            Self::Linear { beta, b } | Self::Poly { b_mat: beta, b, .. } => {
                let k = beta.len();
                beta.copy_from_slice(&theta[..k]);
                *b = theta[k];
            }
            Self::Ccp { beta, .. } => beta.copy_from_slice(theta),
            Self::Greedy { .. } => {}
        }
    }

    /// Anchors of the CCP or greedy model (ascending as constructed).
    pub fn anchors(&self) -> Option<Vec<f64>> {
        match self {
            Self::Ccp { embedding, .. } => Some(embedding.action.anchors.clone()),
            Self::Greedy { anchors, .. } => Some(anchors.clone()),
            _ => None,
        }
    }

    /// Whether the output is already a convex combination of (positive) anchors.
    fn is_anchored(&self) -> bool {
        matches!(self, Self::Ccp { .. } | Self::Greedy { .. })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.eval(x, None)
    }

    /// Evaluates the mean; when `grad` is given, writes `∂μ/∂params` into it.
    pub fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        match self {
            Self::Constant { b } => {
                if let Some(g) = grad {
                    g[0] = 1.0;
                }
                *b
            }
            Self::Linear { beta, b } => {
                if let Some(g) = grad {
                    g[..x.len()].copy_from_slice(x);
                    g[x.len()] = 1.0;
                }
                stats::dot(beta, x) + b
            }
            Self::Poly { b_mat, dim, b } => {
                let d = *dim;
                let mut acc = *b;
                for i in 0..d {
                    for j in 0..d {
                        acc += x[i] * b_mat[i * d + j] * x[j];
                    }
                }
                if let Some(g) = grad {
                    for i in 0..d {
                        for j in 0..d {
                            g[i * d + j] = x[i] * x[j];
                        }
                    }
                    g[d * d] = 1.0;
                }
                acc
            }
            Self::Ccp {
                embedding,
                gamma,
                beta,
                anchor_feats,
            } => {
                let m = embedding.action.m();
                let anchors = &embedding.action.anchors;
                let px = embedding
                    .context_map
                    .apply(x)
                    .expect("context dimension checked by caller");
                let mut v = vec![0.0; m];
                for (k, &pk) in px.iter().enumerate() {
                    for (j, vj) in v.iter_mut().enumerate() {
                        *vj += beta[k * m + j] * pk;
                    }
                }
                let logits: Vec<f64> = (0..m)
                    .map(|i| -gamma * stats::dot(&v, &anchor_feats[i * m..(i + 1) * m]))
                    .collect();
                let s = softmax(&logits);
                let mu = stats::dot(&s, anchors);
                if let Some(g) = grad {
                    let mut gj = vec![0.0; m];
                    for i in 0..m {
                        let c = -gamma * s[i] * (anchors[i] - mu);
                        for (j, gjj) in gj.iter_mut().enumerate() {
                            *gjj += c * anchor_feats[i * m + j];
                        }
                    }
                    for (k, &pk) in px.iter().enumerate() {
                        for j in 0..m {
                            g[k * m + j] = pk * gj[j];
                        }
                    }
                }
                mu
            }
            Self::Greedy { predictor, anchors } => predictor.argmin(x, anchors),
        }
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// A distribution family with a context-dependent mean and a global `σ = exp(sigma_raw)`.
///
/// Parameter vector: mean-model parameters followed by `sigma_raw`. For the lognormal family
/// `μ` and `σ` are the mean and standard deviation of the action (moment-matched), and
/// unanchored mean models are passed through softplus to keep `μ > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub family: Family,
    pub mean: MeanModel,
    pub sigma_raw: f64,
}

/// Parameters of the lognormal in log space plus the sensitivities needed for scores.
struct LnParams {
    m: f64,
    s2: f64,
    /// `∂s²/∂μ` and `∂s²/∂sigma_raw`
    ds2_dmu: f64,
    ds2_dsr: f64,
    mu: f64,
}

impl PolicyModel {
    pub fn new(family: Family, mean: MeanModel, sigma_raw: f64) -> Result<Self> {
        if family == Family::Lognormal {
            if let Some(a) = mean.anchors() {
                if a.iter().any(|&v| v <= 0.0) {
                    return Err(CrmError::Config(
                        "lognormal policies need strictly positive anchors".into(),
                    ));
                }
            }
        }
        Ok(Self {
            family,
            mean,
            sigma_raw,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_raw.exp()
    }

    /// Mean of the action distribution at `x`.
    pub fn location(&self, x: &[f64]) -> f64 {
        self.location_grad(x, None).0
    }

    /// Returns `(μ, dμ/dμ_raw)` and optionally fills `∂μ_raw/∂params`.
    fn location_grad(&self, x: &[f64], grad: Option<&mut [f64]>) -> (f64, f64) {
        let raw = self.mean.eval(x, grad);
        if self.family == Family::Lognormal && !self.mean.is_anchored() {
            (stats::softplus(raw), stats::sigmoid(raw))
        } else {
            (raw, 1.0)
        }
    }

    fn ln_params(&self, mu: f64) -> LnParams {
        let sigma = self.sigma();
        let u = sigma * sigma / (mu * mu);
        let s2 = u.ln_1p();
        LnParams {
            m: mu.ln() - 0.5 * s2,
            s2,
            ds2_dmu: -2.0 * u / (mu * (1.0 + u)),
            ds2_dsr: 2.0 * u / (1.0 + u),
            mu,
        }
    }

    /// Log-space `(m, s)` of the lognormal action distribution at `x`.
    pub fn lognormal_params(&self, x: &[f64]) -> (f64, f64) {
        let p = self.ln_params(self.location(x));
        (p.m, p.s2.sqrt())
    }

    fn fill_grad(&self, grad: &mut [f64], dmu_raw: &[f64], chain: f64, d_mu: f64, d_sr: f64) {
        let k = self.mean.n_params();
        for (g, &d) in grad[..k].iter_mut().zip(dmu_raw) {
            *g = d * chain * d_mu;
        }
        grad[k] = d_sr;
    }

    pub fn to_document(&self) -> PolicyDocument {
        let (embedding, gamma, anchors, predictor) = match &self.mean {
            MeanModel::Ccp { embedding, gamma, .. } => (
                Some(embedding.clone()),
                Some(*gamma),
                Some(embedding.action.anchors.clone()),
                None,
            ),
            MeanModel::Greedy { predictor, anchors } => {
                (None, None, Some(anchors.clone()), Some(predictor.clone()))
            }
            _ => (None, None, None, None),
        };
        let dim = match &self.mean {
            MeanModel::Linear { beta, .. } => Some(beta.len()),
            MeanModel::Poly { dim, .. } => Some(*dim),
            _ => None,
        };
        PolicyDocument {
            family: self.family,
            mean_kind: self.mean.kind(),
            params: self.mean.params(),
            sigma_raw: self.sigma_raw,
            dim,
            embedding,
            gamma,
            anchors,
            predictor,
        }
    }

    pub fn from_document(doc: &PolicyDocument) -> Result<Self> {
        let missing = |what: &str| CrmError::Config(format!("policy document lacks {what}"));
        let p = &doc.params;
        let need = |n: usize| {
            if p.len() == n {
                Ok(())
            } else {
                Err(CrmError::Dimension {
                    expected: n,
                    got: p.len(),
                })
            }
        };
        let mean = match doc.mean_kind {
            MeanKind::Constant => {
                need(1)?;
                MeanModel::Constant { b: p[0] }
            }
            MeanKind::Linear => {
                let d = doc.dim.unwrap_or(p.len().saturating_sub(1));
                need(d + 1)?;
                MeanModel::Linear {
                    beta: p[..d].to_vec(),
                    b: p[d],
                }
            }
            MeanKind::Poly => {
                let d = doc.dim.ok_or_else(|| missing("dim"))?;
                need(d * d + 1)?;
                MeanModel::poly(p[..d * d].to_vec(), d, p[d * d])?
            }
            MeanKind::Ccp => MeanModel::ccp(
                doc.embedding.clone().ok_or_else(|| missing("embedding"))?,
                doc.gamma.ok_or_else(|| missing("gamma"))?,
                p.clone(),
            )?,
            MeanKind::Greedy => MeanModel::Greedy {
                predictor: doc.predictor.clone().ok_or_else(|| missing("predictor"))?,
                anchors: doc.anchors.clone().ok_or_else(|| missing("anchors"))?,
            },
        };
        Self::new(doc.family, mean, doc.sigma_raw)
    }

    pub fn context_map(&self) -> Option<&ContextMap> {
        match &self.mean {
            MeanModel::Ccp { embedding, .. } => Some(&embedding.context_map),
            _ => None,
        }
    }
}

/// On-disk representation of a [`PolicyModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub family: Family,
    pub mean_kind: MeanKind,
    pub params: Vec<f64>,
    pub sigma_raw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<JointEmbedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor: Option<CostPredictor>,
}

impl StochasticPolicy for PolicyModel {
    fn n_params(&self) -> usize {
        self.mean.n_params() + 1
    }

    fn params(&self) -> Vec<f64> {
        let mut v = self.mean.params();
        v.push(self.sigma_raw);
        v
    }

    fn set_params(&mut self, theta: &[f64]) {
        let k = self.mean.n_params();
        self.mean.set_params(&theta[..k]);
        self.sigma_raw = theta[k];
    }

    fn n_mean_params(&self) -> usize {
        self.mean.n_params()
    }

    fn log_density(&self, x: &[f64], a: f64) -> f64 {
        let mu = self.location(x);
        match self.family {
            Family::Normal => stats::normal_logpdf(a, mu, self.sigma()),
            Family::Lognormal => {
                let p = self.ln_params(mu);
                stats::lognormal_logpdf(a, p.m, p.s2.sqrt())
            }
        }
    }

    fn log_density_grad(&self, x: &[f64], a: f64, grad: &mut [f64]) -> f64 {
        let k = self.mean.n_params();
        let mut dmu_raw = vec![0.0; k];
        let (mu, chain) = self.location_grad(x, Some(&mut dmu_raw));
        match self.family {
            Family::Normal => {
                let sigma = self.sigma();
                let r = (a - mu) / sigma;
                self.fill_grad(grad, &dmu_raw, chain, r / sigma, r * r - 1.0);
                stats::normal_logpdf(a, mu, sigma)
            }
            Family::Lognormal => {
                let p = self.ln_params(mu);
                if a <= 0.0 {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    return f64::NEG_INFINITY;
                }
                let s = p.s2.sqrt();
                let z = (a.ln() - p.m) / s;
                // total derivative in s², including m's dependence on s²
                let d_s2 = (z * z - 1.0) / (2.0 * p.s2) - z / (2.0 * s);
                let d_mu = z / (s * p.mu) + d_s2 * p.ds2_dmu;
                self.fill_grad(grad, &dmu_raw, chain, d_mu, d_s2 * p.ds2_dsr);
                stats::lognormal_logpdf(a, p.m, s)
            }
        }
    }

    fn entropy(&self, x: &[f64]) -> f64 {
        match self.family {
            Family::Normal => 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + self.sigma_raw,
            Family::Lognormal => {
                let p = self.ln_params(self.location(x));
                p.m + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * p.s2).ln()
            }
        }
    }

    fn entropy_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.mean.n_params();
        match self.family {
            Family::Normal => {
                grad[..k].iter_mut().for_each(|g| *g = 0.0);
                grad[k] = 1.0;
                self.entropy(x)
            }
            Family::Lognormal => {
                let mut dmu_raw = vec![0.0; k];
                let (mu, chain) = self.location_grad(x, Some(&mut dmu_raw));
                let p = self.ln_params(mu);
                let d_s2 = -0.5 + 0.5 / p.s2;
                let d_mu = 1.0 / p.mu + d_s2 * p.ds2_dmu;
                self.fill_grad(grad, &dmu_raw, chain, d_mu, d_s2 * p.ds2_dsr);
                p.m + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * p.s2).ln()
            }
        }
    }

    fn sample(&self, x: &[f64], rng: &mut Rng) -> f64 {
        self.sample_many(x, 1, rng)[0]
    }

    fn sample_many(&self, x: &[f64], k: usize, rng: &mut Rng) -> Vec<f64> {
        let mu = self.location(x);
        match self.family {
            Family::Normal => {
                let sigma = self.sigma();
                (0..k)
                    .map(|_| mu + sigma * stats::std_normal(rng))
                    .collect::<Vec<f64>>()
            }
            Family::Lognormal => {
                let p = self.ln_params(mu);
                let s = p.s2.sqrt();
                (0..k)
                    .map(|_| (p.m + s * stats::std_normal(rng)).exp())
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{ContextMapKind, NystromEmbedding};

    fn ccp(beta: Vec<f64>, gamma: f64) -> MeanModel {
        let ne = NystromEmbedding::fit(&[0.5, 1.0, 2.0], 1, 1.0).unwrap();
        let je = JointEmbedding::new(ContextMap::new(ContextMapKind::Linear, 2, true), ne);
        MeanModel::ccp(je, gamma, beta).unwrap()
    }

    #[test]
    fn ccp_zero_beta_is_anchor_mean() {
        let mm = ccp(vec![0.0; 9], 3.0);
        assert!((mm.value(&[0.3, -1.0]) - 3.5 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn linear_zero_beta_is_intercept() {
        let mm = MeanModel::Linear {
            beta: vec![0.0; 3],
            b: 0.7,
        };
        assert_eq!(mm.value(&[1.0, -2.0, 9.0]), 0.7);
    }

    #[test]
    fn normal_mode_density() {
        let pm = PolicyModel::new(Family::Normal, MeanModel::Constant { b: 1.3 }, 0.4f64.ln()).unwrap();
        let expect = -0.5 * (2.0 * std::f64::consts::PI * 0.16).ln();
        assert!((pm.log_density(&[], 1.3) - expect).abs() < 1e-14);
    }

    #[test]
    fn normal_constant_score() {
        let pm = PolicyModel::new(Family::Normal, MeanModel::Constant { b: 1.0 }, 0.5f64.ln()).unwrap();
        let mut g = vec![0.0; 2];
        pm.log_density_grad(&[], 1.7, &mut g);
        assert!((g[0] - 0.7 / 0.25).abs() < 1e-12);
    }

    #[test]
    fn normal_zero_entropy() {
        let sigma = 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt();
        let pm = PolicyModel::new(Family::Normal, MeanModel::Constant { b: 0.0 }, sigma.ln()).unwrap();
        assert!(pm.entropy(&[]).abs() < 1e-14);
    }

    #[test]
    fn lognormal_rejects_nonpositive_support() {
        let pm = PolicyModel::new(Family::Lognormal, MeanModel::Constant { b: 1.0 }, 0.0).unwrap();
        assert_eq!(pm.log_density(&[], -0.1), f64::NEG_INFINITY);
        assert_eq!(pm.log_density(&[], 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn degenerate_samples_concentrate() {
        let pm = PolicyModel::new(Family::Normal, MeanModel::Constant { b: 2.5 }, 1e-8f64.ln()).unwrap();
        let mut rng = stats::rng(1);
        for a in pm.sample_many(&[], 1000, &mut rng) {
            assert!((a - 2.5).abs() < 1e-6);
        }
    }

    #[test]
    fn document_round_trip() {
        let pm = PolicyModel::new(Family::Lognormal, ccp(vec![0.1; 9], 5.0), -0.3).unwrap();
        let json = serde_json::to_string(&pm.to_document()).unwrap();
        let back = PolicyModel::from_document(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, pm);
    }

    #[test]
    fn poly_dimension_limit() {
        assert!(MeanModel::poly(vec![0.0; 17 * 17], 17, 0.0).is_err());
    }
}
