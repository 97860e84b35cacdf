use serde::{Deserialize, Serialize};

use crm_core::optim::{LbfgsConfig, ProxConfig};
use crm_core::train::{CcpSpec, PolicySpec, TrainConfig};
use crm_core::{CrmObjective, EstimatorKind, Family, MeanKind};

/// Cartesian grid of training configurations. Anchor counts and softmax temperatures only
/// apply to CCP means and are ignored otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub family: Family,
    pub mean: MeanKind,
    pub estimator: EstimatorKind,
    pub lambda_var: Vec<f64>,
    #[serde(rename = "M", with = "m_values")]
    pub clip_m: Vec<f64>,
    pub kappa: Vec<f64>,
    #[serde(rename = "C_reg")]
    pub c_reg: Vec<f64>,
    pub n_anchors: Vec<usize>,
    pub gamma: Vec<f64>,
    pub lambda_ent: f64,
    pub outer_iters: usize,
    pub inner: LbfgsConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            family: Family::Lognormal,
            mean: MeanKind::Ccp,
            estimator: EstimatorKind::Scips,
            lambda_var: vec![0.0, 0.001, 0.01, 0.1, 1.0, 10.0, 100.0],
            clip_m: vec![1.0, 1.7, 2.8, 4.6, 7.7, 12.9, 21.5, 35.9, 59.9, 100.0],
            kappa: vec![0.001, 0.01, 0.1, 1.0],
            c_reg: vec![1e-5, 1e-4, 1e-3, 0.01, 0.1],
            n_anchors: vec![2, 3, 5, 7, 10],
            gamma: vec![1.0, 10.0, 100.0],
            lambda_ent: 1e-3,
            outer_iters: 10,
            inner: LbfgsConfig::default(),
        }
    }
}

mod m_values {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|m| if m.is_finite() { Some(*m) } else { None })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|m| m.unwrap_or(f64::INFINITY))
            .collect())
    }
}

impl GridSpec {
    pub fn expand(&self) -> Vec<TrainConfig> {
        let ccp = self.mean == MeanKind::Ccp;
        let anchors: Vec<Option<usize>> = if ccp {
            self.n_anchors.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let gammas: Vec<Option<f64>> = if ccp {
            self.gamma.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let mut out = Vec::new();
        for &m in &self.clip_m {
            for &lv in &self.lambda_var {
                for &kappa in &self.kappa {
                    for &c in &self.c_reg {
                        for &na in &anchors {
                            for &g in &gammas {
                                let mut policy = PolicySpec::new(self.family, self.mean);
                                policy.ccp = CcpSpec {
                                    n_anchors: na.unwrap_or(policy.ccp.n_anchors),
                                    gamma: g.unwrap_or(policy.ccp.gamma),
                                    ..policy.ccp
                                };
                                out.push(TrainConfig {
                                    policy,
                                    objective: CrmObjective {
                                        estimator: self.estimator,
                                        clip_m: m,
                                        lambda_var: lv,
                                        lambda_ent: self.lambda_ent,
                                        c_reg: c,
                                    },
                                    prox: ProxConfig {
                                        kappa,
                                        outer_iters: self.outer_iters,
                                        inner: self.inner,
                                        seed: 0,
                                    },
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}
