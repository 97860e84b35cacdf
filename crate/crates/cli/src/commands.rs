use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crm_core::data::kfold_indices;
use crm_core::envs::{clipping_toy, generate as draw};
use crm_core::policies::{LoggingDescription, PolicyDocument};
use crm_core::protocol::{
    cross_validate, evaluate_protocol, validate_protocol_experiment, whatif_diagnostics, Setup, ValidationConfig,
    WhatIfConfig,
};
use crm_core::train::{train_policy, CcpSpec, PolicySpec, TrainConfig};
use crm_core::{
    CrmObjective, EstimatorKind, Family, LoggedDataset, MeanKind, PolicyModel, PotentialEnv, PotentialKind,
    ProtocolConfig, WarfarinSim,
};

use crate::grid::GridSpec;
use crate::manifest::{beside, read_json, write_json, Manifest};
use crate::{EnvName, EvaluateArgs, GenerateArgs, SelectArgs, TrainArgs, ValidateArgs, WhatIfArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// The run finished but its diagnostic said the estimate cannot be trusted.
    DiagnosticFailure,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn load(path: &Path) -> anyhow::Result<LoggedDataset> {
    Ok(LoggedDataset::load_csv(path).with_context(|| format!("loading {}", path.display()))?)
}

fn describe_logging(ds: &LoggedDataset, family: Option<Family>) -> anyhow::Result<LoggingDescription> {
    let family = family.unwrap_or(if ds.actions().iter().all(|&a| a > 0.0) {
        Family::Lognormal
    } else {
        Family::Normal
    });
    Ok(LoggingDescription::from_actions(ds.actions(), family)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub env: EnvName,
    pub n: usize,
    pub outlier: bool,
    pub seed: u64,
    pub out: PathBuf,
}

impl GenerateConfig {
    pub fn resolve(a: GenerateArgs, seed: u64) -> Self {
        Self {
            env: a.env,
            n: a.n,
            outlier: a.outlier,
            seed,
            out: a.out,
        }
    }
}

pub fn generate(cfg: GenerateConfig) -> anyhow::Result<Status> {
    let ds = match cfg.env {
        EnvName::Noisymoons => draw(&PotentialEnv::new(PotentialKind::Noisymoons), cfg.n, cfg.seed)?.0,
        EnvName::Noisycircles => draw(&PotentialEnv::new(PotentialKind::Noisycircles), cfg.n, cfg.seed)?.0,
        EnvName::Anisotropic => draw(&PotentialEnv::new(PotentialKind::Anisotropic), cfg.n, cfg.seed)?.0,
        EnvName::WarfarinSim => draw(&WarfarinSim::default(), cfg.n, cfg.seed)?.0,
        EnvName::Toy => clipping_toy(cfg.n, cfg.outlier, cfg.seed)?,
    };
    if let Some(dir) = cfg.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ds.save_csv(&cfg.out)?;
    log::info!("wrote {} rows to {}", ds.len(), cfg.out.display());
    Manifest::new("generate", cfg.seed, &cfg)?.write(&beside(&cfg.out))?;
    Ok(Status::Success)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRun {
    pub data: PathBuf,
    pub train: TrainConfig,
    pub logging: LoggingDescription,
    pub seed: u64,
    pub out: PathBuf,
}

impl TrainRun {
    pub fn resolve(a: TrainArgs, seed: u64) -> anyhow::Result<Self> {
        let mut cfg: TrainConfig = match &a.config {
            Some(p) => read_json(p)?,
            None => TrainConfig {
                policy: PolicySpec::new(Family::Lognormal, MeanKind::Ccp),
                objective: CrmObjective {
                    clip_m: 10.0,
                    ..CrmObjective::new(EstimatorKind::Scips)
                },
                prox: Default::default(),
            },
        };
        if let Some(f) = a.family {
            cfg.policy.family = f;
        }
        if let Some(m) = a.mean {
            cfg.policy.mean = m;
        }
        if let Some(e) = a.estimator {
            cfg.objective.estimator = e;
        }
        if let Some(v) = a.clip_m {
            cfg.objective.clip_m = v;
        }
        if let Some(v) = a.lambda_var {
            cfg.objective.lambda_var = v;
        }
        if let Some(v) = a.lambda_ent {
            cfg.objective.lambda_ent = v;
        }
        if let Some(v) = a.c_reg {
            cfg.objective.c_reg = v;
        }
        if let Some(v) = a.prox_kappa {
            cfg.prox.kappa = v;
        }
        if let Some(v) = a.outer_iters {
            cfg.prox.outer_iters = v;
        }
        let ccp = &mut cfg.policy.ccp;
        *ccp = CcpSpec {
            n_anchors: a.anchors.unwrap_or(ccp.n_anchors),
            gamma: a.gamma.unwrap_or(ccp.gamma),
            bandwidth: a.bandwidth.or(ccp.bandwidth),
            ..ccp.clone()
        };
        cfg.prox.seed = seed;
        let ds = load(&a.data)?;
        let logging = describe_logging(&ds, a.logging_family)?;
        Ok(Self {
            data: a.data,
            train: cfg,
            logging,
            seed,
            out: a.out,
        })
    }
}

pub fn train(run: TrainRun) -> anyhow::Result<Status> {
    run.train.objective.validate()?;
    let ds = load(&run.data)?;
    let (pm, result) = train_policy(&run.train, &ds, &run.logging, run.seed)?;
    fs::create_dir_all(&run.out)?;
    write_json(&run.out.join("policy.json"), &pm.to_document())?;
    write_json(&run.out.join("train_result.json"), &result)?;
    Manifest::new("train", run.seed, &run)?.write(&run.out.join("manifest.json"))?;
    log::info!(
        "objective {:.6} -> {:.6} in {:.2}s",
        result.initial_objective,
        result.final_objective(),
        result.wall_time_secs
    );
    Ok(Status::Success)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateConfig {
    pub model: PathBuf,
    pub data: PathBuf,
    pub valid: Option<PathBuf>,
    pub protocol: ProtocolConfig,
    pub logging_risk: Option<f64>,
    pub report: PathBuf,
}

impl EvaluateConfig {
    pub fn resolve(a: EvaluateArgs, seed: u64) -> Self {
        Self {
            model: a.model,
            data: a.data,
            valid: a.valid,
            protocol: ProtocolConfig {
                nu: a.nu,
                delta: a.delta,
                n_boot: a.n_boot,
                seed,
            },
            logging_risk: a.logging_risk,
            report: a.report,
        }
    }
}

pub fn evaluate(cfg: EvaluateConfig) -> anyhow::Result<Status> {
    let doc: PolicyDocument = read_json(&cfg.model)?;
    let pm = PolicyModel::from_document(&doc)?;
    let data = load(&cfg.data)?;
    let (valid, test) = match &cfg.valid {
        Some(p) => (load(p)?, data),
        None => {
            let halves = kfold_indices(data.len(), 2, cfg.protocol.seed)?;
            (data.subset(&halves[0])?, data.subset(&halves[1])?)
        }
    };
    let risk = cfg.logging_risk.unwrap_or_else(|| test.mean_cost());
    let report = evaluate_protocol(&pm, &valid, &test, risk, &cfg.protocol)?;
    write_json(&cfg.report, &report)?;
    Manifest::new("evaluate", cfg.protocol.seed, &cfg)?.write(&beside(&cfg.report))?;
    if report.valid {
        Ok(Status::Success)
    } else {
        log::warn!(
            "estimate invalid: ESS ratio {:.4} (validation) / {:.4} (test) against ν = {}",
            report.ess_ratio,
            report.ess_ratio_test,
            report.nu
        );
        Ok(Status::DiagnosticFailure)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectConfig {
    pub data: PathBuf,
    pub grid: GridSpec,
    pub folds: usize,
    pub nu: f64,
    pub logging: LoggingDescription,
    pub seed: u64,
    pub out: PathBuf,
}

impl SelectConfig {
    pub fn resolve(a: SelectArgs, seed: u64) -> anyhow::Result<Self> {
        let grid = match &a.grid {
            Some(p) => read_json(p)?,
            None => GridSpec::default(),
        };
        let ds = load(&a.data)?;
        Ok(Self {
            logging: describe_logging(&ds, a.logging_family)?,
            data: a.data,
            grid,
            folds: a.folds,
            nu: a.nu,
            seed,
            out: a.out,
        })
    }
}

#[derive(Serialize)]
struct CvRow {
    candidate: usize,
    #[serde(rename = "M")]
    clip_m: f64,
    lambda_var: f64,
    kappa: f64,
    #[serde(rename = "C_reg")]
    c_reg: f64,
    n_anchors: usize,
    gamma: f64,
    score: Option<f64>,
    folds_kept: usize,
}

pub fn select(cfg: SelectConfig) -> anyhow::Result<Status> {
    let ds = load(&cfg.data)?;
    let candidates = cfg.grid.expand();
    if candidates.is_empty() {
        bail!(crm_core::CrmError::Config("the grid is empty".into()));
    }
    log::info!("cross-validating {} candidates over {} folds", candidates.len(), cfg.folds);
    let cv = cross_validate(&candidates, &ds, &cfg.logging, cfg.folds, cfg.nu, cfg.seed)?;
    let rows: Vec<CvRow> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| CvRow {
            candidate: i,
            clip_m: c.objective.clip_m,
            lambda_var: c.objective.lambda_var,
            kappa: c.prox.kappa,
            c_reg: c.objective.c_reg,
            n_anchors: c.policy.ccp.n_anchors,
            gamma: c.policy.ccp.gamma,
            score: cv.scores[i],
            folds_kept: cv.folds.iter().filter(|f| f.candidate == i && f.kept).count(),
        })
        .collect();
    fs::create_dir_all(&cfg.out)?;
    write_csv(&cfg.out.join("cv_table.csv"), &rows)?;
    write_json(&cfg.out.join("folds.json"), &cv.folds)?;
    write_json(&cfg.out.join("best.json"), &candidates[cv.best])?;
    Manifest::new("select", cfg.seed, &cfg)?.write(&cfg.out.join("manifest.json"))?;
    Ok(Status::Success)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidateConfig {
    pub setup: Setup,
    pub config: ValidationConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl ValidateConfig {
    pub fn resolve(a: ValidateArgs, seed: u64) -> Self {
        let mut config = ValidationConfig::for_setup(a.setup);
        config.n_policies = a.n_policies;
        if let Some(n) = a.n_logged {
            config.n_logged = n;
        }
        if let Some(nu) = a.nu {
            config.nu = nu;
        }
        if let Some(b) = a.n_boot {
            config.n_boot = b;
        }
        Self {
            setup: a.setup,
            config,
            seed,
            out: a.out,
        }
    }
}

#[derive(Serialize)]
struct SweepRow {
    estimator: &'static str,
    nu: f64,
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
    precision: f64,
    recall: f64,
    f1: f64,
}

pub fn validate(cfg: ValidateConfig) -> anyhow::Result<Status> {
    let s = validate_protocol_experiment(cfg.setup, &cfg.config, cfg.seed)?;
    fs::create_dir_all(&cfg.out)?;
    let sweep: Vec<SweepRow> = [("snips", &s.sweep_snips), ("ips", &s.sweep_ips)]
        .into_iter()
        .flat_map(|(name, pts)| {
            pts.iter().map(move |p| SweepRow {
                estimator: name,
                nu: p.nu,
                tp: p.counts.tp,
                fp: p.counts.fp,
                tn: p.counts.tn,
                fn_: p.counts.fn_,
                precision: p.precision,
                recall: p.recall,
                f1: p.f1,
            })
        })
        .collect();
    write_csv(&cfg.out.join("sweep.csv"), &sweep)?;
    write_csv(&cfg.out.join("records.csv"), &s.records)?;
    write_json(&cfg.out.join("summary.json"), &s)?;
    Manifest::new("validate-protocol", cfg.seed, &cfg)?.write(&cfg.out.join("manifest.json"))?;
    Ok(Status::Success)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhatIfRun {
    pub grid: Vec<f64>,
    pub n: usize,
    pub config: WhatIfConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl WhatIfRun {
    pub fn resolve(a: WhatIfArgs, seed: u64) -> Self {
        let config = WhatIfConfig::default();
        let grid = a.grid.unwrap_or_else(|| config.grid(a.half_width, a.points.max(2)));
        Self {
            grid,
            n: a.n,
            config,
            seed,
            out: a.out,
        }
    }
}

pub fn whatif(run: WhatIfRun) -> anyhow::Result<Status> {
    let rows = whatif_diagnostics(&run.grid, run.n, run.seed, &run.config)?;
    fs::create_dir_all(&run.out)?;
    write_csv(&run.out.join("whatif.csv"), &rows)?;
    write_json(&run.out.join("whatif.json"), &rows)?;
    Manifest::new("whatif", run.seed, &run)?.write(&run.out.join("manifest.json"))?;
    Ok(Status::Success)
}

pub fn rerun(path: &Path) -> anyhow::Result<Status> {
    let m = Manifest::read(path)?;
    let cfg = m.config;
    let parse = |what: &str| format!("manifest config does not describe a {what} run");
    match m.command.as_str() {
        "generate" => generate(serde_json::from_value(cfg).with_context(|| parse("generate"))?),
        "train" => train(serde_json::from_value(cfg).with_context(|| parse("train"))?),
        "evaluate" => evaluate(serde_json::from_value(cfg).with_context(|| parse("evaluate"))?),
        "select" => select(serde_json::from_value(cfg).with_context(|| parse("select"))?),
        "validate-protocol" => validate(serde_json::from_value(cfg).with_context(|| parse("validate-protocol"))?),
        "whatif" => whatif(serde_json::from_value(cfg).with_context(|| parse("whatif"))?),
        other => bail!(crm_core::CrmError::Config(format!("unknown command {other:?} in manifest"))),
    }
}

