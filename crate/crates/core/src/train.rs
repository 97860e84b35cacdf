//! Policy construction from a declarative spec, and end-to-end training.

use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::embeddings::{
    median_heuristic_bandwidth, select_anchors, AnchorStrategy, ContextMap, ContextMapKind, JointEmbedding,
    NystromEmbedding,
};
use crate::error::{CrmError, Result};
use crate::estimators::{dm_policy, CostPredictor, CrmObjective, EstimatorKind};
use crate::optim::{proximal_train, ProxConfig, TrainResult};
use crate::policies::{
    centered_anchors, init_near_logging, Family, LoggingDescription, MeanKind, MeanSpec, PolicyModel,
    StochasticPolicy,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcpSpec {
    pub n_anchors: usize,
    /// `None` places a grid symmetric about the logging mean.
    pub strategy: Option<AnchorStrategy>,
    /// `None` uses the median heuristic on the logged actions.
    pub bandwidth: Option<f64>,
    pub gamma: f64,
    pub context_map: ContextMapKind,
    pub intercept: bool,
}

impl Default for CcpSpec {
    fn default() -> Self {
        Self {
            n_anchors: 5,
            strategy: None,
            bandwidth: None,
            gamma: 10.0,
            context_map: ContextMapKind::Linear,
            intercept: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub family: Family,
    pub mean: MeanKind,
    #[serde(default)]
    pub ccp: CcpSpec,
    #[serde(default = "default_init_noise")]
    pub init_noise: f64,
}

fn default_init_noise() -> f64 {
    0.01
}

impl PolicySpec {
    pub fn new(family: Family, mean: MeanKind) -> Self {
        Self {
            family,
            mean,
            ccp: CcpSpec::default(),
            init_noise: default_init_noise(),
        }
    }
}

/// Everything needed to train one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub policy: PolicySpec,
    pub objective: CrmObjective,
    #[serde(default)]
    pub prox: ProxConfig,
}

pub fn anchors_for(spec: &CcpSpec, ds: &LoggedDataset, logging: &LoggingDescription, seed: u64) -> Result<Vec<f64>> {
    match spec.strategy {
        None => centered_anchors(logging.mean, ds.actions(), spec.n_anchors),
        Some(s) => select_anchors(ds.actions(), spec.n_anchors, s, seed),
    }
}

pub fn joint_embedding(spec: &CcpSpec, ds: &LoggedDataset, logging: &LoggingDescription, seed: u64) -> Result<JointEmbedding> {
    let anchors = anchors_for(spec, ds, logging, seed)?;
    let bandwidth = match spec.bandwidth {
        Some(b) => b,
        None => median_heuristic_bandwidth(ds.actions())?,
    };
    Ok(JointEmbedding::new(
        ContextMap::new(spec.context_map, ds.dim(), spec.intercept),
        NystromEmbedding::fit(&anchors, 1, bandwidth)?,
    ))
}

pub fn build_initial_policy(
    spec: &PolicySpec,
    ds: &LoggedDataset,
    logging: &LoggingDescription,
    seed: u64,
) -> Result<PolicyModel> {
    let mean = match spec.mean {
        MeanKind::Constant => MeanSpec::Constant,
        MeanKind::Linear => MeanSpec::Linear { dim: ds.dim() },
        MeanKind::Poly => MeanSpec::Poly { dim: ds.dim() },
        MeanKind::Ccp => MeanSpec::Ccp {
            embedding: joint_embedding(&spec.ccp, ds, logging, seed)?,
            gamma: spec.ccp.gamma,
        },
        MeanKind::Greedy => {
            return Err(CrmError::Config(
                "greedy policies come from the direct method, not from initialization".into(),
            ))
        }
    };
    init_near_logging(logging, spec.family, mean, seed, spec.init_noise)
}

/// Trains a policy on `ds`. Direct-method objectives fit a ridge cost model instead.
pub fn train_policy(
    cfg: &TrainConfig,
    ds: &LoggedDataset,
    logging: &LoggingDescription,
    seed: u64,
) -> Result<(PolicyModel, TrainResult)> {
    if matches!(cfg.objective.estimator, EstimatorKind::Dm | EstimatorKind::Sdm) {
        let start = std::time::Instant::now();
        let embedding = joint_embedding(&cfg.policy.ccp, ds, logging, seed)?;
        let anchors = embedding.action.anchors.clone();
        let cp = CostPredictor::fit(ds, embedding, cfg.objective.c_reg.max(1e-6))?;
        let sigma = if cfg.objective.estimator == EstimatorKind::Sdm {
            logging.std
        } else {
            1e-3 * logging.std
        };
        let pm = dm_policy(cp, anchors, sigma)?;
        let theta = pm.params();
        return Ok((
            pm,
            TrainResult {
                theta,
                initial_objective: f64::NAN,
                trace: Vec::new(),
                statuses: Vec::new(),
                inner_iterations: Vec::new(),
                wall_time_secs: start.elapsed().as_secs_f64(),
            },
        ));
    }
    let mut pm = build_initial_policy(&cfg.policy, ds, logging, seed)?;
    let result = proximal_train(&pm, ds, &cfg.objective, &cfg.prox)?;
    pm.set_params(&result.theta);
    Ok((pm, result))
}
