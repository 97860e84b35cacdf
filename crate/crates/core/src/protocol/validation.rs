use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bootstrap, TestEstimator};
use crate::data::{kfold_indices, LoggedDataset};
use crate::envs::reward_piecewise;
use crate::error::{CrmError, Result};
use crate::estimators::{importance_weights, snips, WeightStats};
use crate::policies::{Family, MeanModel, PolicyModel, StochasticPolicy};
use crate::quadrature::{gauss_legendre, integrate};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    /// Perturbations of the logging policy.
    I,
    /// Perturbations of the optimal policy.
    Ii,
}

impl std::str::FromStr for Setup {
    type Err = CrmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" | "1" => Ok(Self::I),
            "ii" | "2" => Ok(Self::Ii),
            _ => Err(CrmError::Config(format!("unknown setup {s:?}, expected i or ii"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub logging_mean: f64,
    pub logging_std: f64,
    pub optimal_mean: f64,
    pub optimal_std: f64,
    pub mean_noise: f64,
    pub log_std_noise: f64,
    pub rho_left: f64,
    pub rho_right: f64,
    pub cost_noise: f64,
    pub n_policies: usize,
    pub n_logged: usize,
    pub nu: f64,
    pub delta: f64,
    pub n_boot: usize,
    pub nu_grid: Vec<f64>,
}

impl ValidationConfig {
    pub fn for_setup(_setup: Setup) -> Self {
        Self {
            logging_mean: 2.0,
            logging_std: 0.5,
            optimal_mean: 1.0,
            optimal_std: 0.3,
            mean_noise: 0.25,
            log_std_noise: 0.25,
            rho_left: 2.0,
            rho_right: 1.0,
            cost_noise: 0.0,
            n_policies: 2000,
            n_logged: 20_000,
            nu: 0.01,
            delta: 0.05,
            n_boot: 100,
            nu_grid: vec![
                0.0, 1e-4, 2e-4, 5e-4, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5,
            ],
        }
    }

    fn reward(&self, a: f64) -> f64 {
        reward_piecewise(a, self.optimal_mean, self.rho_left, self.rho_right)
    }

    /// Exact risk of a context-free policy: the reward is piecewise linear with known support.
    pub fn true_risk(&self, pm: &PolicyModel) -> f64 {
        let rule = gauss_legendre(16);
        let p = self.optimal_mean;
        let f = |a: f64| -self.reward(a) * pm.log_density(&[], a).exp();
        integrate(f, p - self.rho_left, p, 64, &rule) + integrate(f, p, p + self.rho_right, 64, &rule)
    }

    pub fn logging_policy(&self) -> PolicyModel {
        PolicyModel {
            family: Family::Lognormal,
            mean: MeanModel::Constant {
                b: stats::softplus_inv(self.logging_mean),
            },
            sigma_raw: self.logging_std.ln(),
        }
    }

    fn candidate(&self, setup: Setup, rng: &mut stats::Rng) -> PolicyModel {
        let e1 = stats::std_normal(rng);
        let e2 = stats::std_normal(rng);
        match setup {
            Setup::I => PolicyModel {
                family: Family::Lognormal,
                mean: MeanModel::Constant {
                    b: stats::softplus_inv((self.logging_mean + self.mean_noise * e1).max(0.05)),
                },
                sigma_raw: self.logging_std.ln() + self.log_std_noise * e2,
            },
            Setup::Ii => PolicyModel {
                family: Family::Normal,
                mean: MeanModel::Constant {
                    b: self.optimal_mean + self.mean_noise * e1,
                },
                sigma_raw: self.optimal_std.ln() + self.log_std_noise * e2,
            },
        }
    }

    fn logged(&self, seed: u64) -> Result<LoggedDataset> {
        let pi0 = self.logging_policy();
        let mut rng = stats::rng(seed);
        let actions = pi0.sample_many(&[], self.n_logged, &mut rng);
        let props: Vec<f64> = actions.iter().map(|&a| pi0.log_density(&[], a).exp()).collect();
        let costs: Vec<f64> = actions
            .iter()
            .map(|&a| -self.reward(a) + self.cost_noise * stats::std_normal(&mut rng))
            .collect();
        LoggedDataset::new(Vec::new(), 0, actions, props, costs)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    fn add(&mut self, truth: bool, decision: bool) {
        match (truth, decision) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub index: usize,
    pub mean: f64,
    pub std: f64,
    pub true_risk: f64,
    pub improves: bool,
    pub ess_valid: f64,
    pub ess_test: f64,
    pub snips: f64,
    pub ips: f64,
    pub snips_upper: f64,
    pub ips_upper: f64,
    pub snips_reject: bool,
    pub ips_reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub nu: f64,
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub setup: Setup,
    pub config: ValidationConfig,
    pub logging_true_risk: f64,
    pub logging_risk_estimate: f64,
    pub snips: Counts,
    pub ips: Counts,
    pub sweep_snips: Vec<SweepPoint>,
    pub sweep_ips: Vec<SweepPoint>,
    pub records: Vec<PolicyRecord>,
}

impl ValidationSummary {
    /// Whether the best F1 over the sweep is attained strictly inside the grid and beats both ends.
    pub fn has_interior_f1_max(sweep: &[SweepPoint]) -> bool {
        if sweep.len() < 3 {
            return false;
        }
        let best = sweep.iter().map(|s| s.f1).fold(f64::NEG_INFINITY, f64::max);
        best > sweep[0].f1 && best > sweep[sweep.len() - 1].f1
    }
}

struct Evaluated {
    record: PolicyRecord,
    vs: WeightStats,
    ts: WeightStats,
    snips_boot_ok: bool,
    ips_boot_ok: bool,
}

fn decision(ess_v: f64, ess_t: f64, nu: f64, est: f64, boot_ok: bool, upper: f64, reference: f64) -> bool {
    ess_v > nu && ess_t > nu && est.is_finite() && boot_ok && upper < reference
}

/// Draws perturbed candidate policies, decides each offline with SNIPS- and IPS-based
/// protocols, and compares against exact online risks.
pub fn validate_protocol_experiment(setup: Setup, cfg: &ValidationConfig, seed: u64) -> Result<ValidationSummary> {
    if cfg.n_policies == 0 || cfg.n_logged < 4 {
        return Err(CrmError::Config("need at least one policy and four logged rows".into()));
    }
    let ds = cfg.logged(stats::derive_seed(seed, 0))?;
    let halves = kfold_indices(ds.len(), 2, stats::derive_seed(seed, 1))?;
    let valid = ds.subset(&halves[0])?;
    let test = ds.subset(&halves[1])?;
    let reference = test.mean_cost();
    let logging_true_risk = cfg.true_risk(&cfg.logging_policy());

    let evaluated: Vec<Result<Evaluated>> = (0..cfg.n_policies)
        .into_par_iter()
        .map(|i| {
            let mut rng = stats::rng(stats::derive_seed(seed, 1000 + i as u64));
            let pm = cfg.candidate(setup, &mut rng);
            let true_risk = cfg.true_risk(&pm);
            let vs = importance_weights(&pm, &valid)?;
            let ts = importance_weights(&pm, &test)?;
            let boot_seed = stats::derive_seed(seed, 1_000_000 + i as u64);
            let sb = bootstrap(TestEstimator::Snips, &ts.weights, test.costs(), cfg.n_boot, cfg.delta, boot_seed);
            let ib = bootstrap(TestEstimator::Ips, &ts.weights, test.costs(), cfg.n_boot, cfg.delta, boot_seed);
            let snips_est = snips(&ts.weights, test.costs()).unwrap_or(f64::NAN);
            let ips_est = ts.weights.iter().zip(test.costs()).map(|(w, y)| w * y).sum::<f64>() / ts.weights.len() as f64;
            let record = PolicyRecord {
                index: i,
                mean: pm.location(&[]),
                std: pm.sigma(),
                true_risk,
                improves: true_risk < logging_true_risk,
                ess_valid: vs.ess_ratio,
                ess_test: ts.ess_ratio,
                snips: snips_est,
                ips: ips_est,
                snips_upper: sb.upper_one_sided,
                ips_upper: ib.upper_one_sided,
                snips_reject: decision(vs.ess_ratio, ts.ess_ratio, cfg.nu, snips_est, sb.valid, sb.upper_one_sided, reference),
                ips_reject: decision(vs.ess_ratio, ts.ess_ratio, cfg.nu, ips_est, ib.valid, ib.upper_one_sided, reference),
            };
            Ok(Evaluated {
                record,
                vs,
                ts,
                snips_boot_ok: sb.valid,
                ips_boot_ok: ib.valid,
            })
        })
        .collect();
    let mut rows = Vec::with_capacity(cfg.n_policies);
    for e in evaluated {
        rows.push(e?);
    }

    let mut snips_counts = Counts::default();
    let mut ips_counts = Counts::default();
    for r in &rows {
        snips_counts.add(r.record.improves, r.record.snips_reject);
        ips_counts.add(r.record.improves, r.record.ips_reject);
    }
    let sweep = |kind: TestEstimator| -> Vec<SweepPoint> {
        cfg.nu_grid
            .iter()
            .map(|&nu| {
                let mut c = Counts::default();
                for r in &rows {
                    let (est, ok, upper) = match kind {
                        TestEstimator::Snips => (r.record.snips, r.snips_boot_ok, r.record.snips_upper),
                        TestEstimator::Ips => (r.record.ips, r.ips_boot_ok, r.record.ips_upper),
                    };
                    c.add(
                        r.record.improves,
                        decision(r.vs.ess_ratio, r.ts.ess_ratio, nu, est, ok, upper, reference),
                    );
                }
                SweepPoint {
                    nu,
                    precision: c.precision(),
                    recall: c.recall(),
                    f1: c.f1(),
                    counts: c,
                }
            })
            .collect()
    };
    let sweep_snips = sweep(TestEstimator::Snips);
    let sweep_ips = sweep(TestEstimator::Ips);
    Ok(ValidationSummary {
        setup,
        config: cfg.clone(),
        logging_true_risk,
        logging_risk_estimate: reference,
        snips: snips_counts,
        ips: ips_counts,
        sweep_snips,
        sweep_ips,
        records: rows.into_iter().map(|r| r.record).collect(),
    })
}
