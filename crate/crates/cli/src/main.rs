use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use crm_core::{CrmError, EstimatorKind, Family, MeanKind};

mod commands;
mod grid;
mod manifest;

use commands::Status;

#[derive(Parser, Debug)]
#[command(name = "crm", version, about = "Counterfactual risk minimization with continuous actions")]
struct Cli {
    /// Master seed for every random choice of the run.
    #[arg(long, env = "CRM_SEED", default_value_t = 0, global = true)]
    seed: u64,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a logged dataset from a synthetic environment.
    Generate(GenerateArgs),
    /// Learn a policy from logged data.
    Train(TrainArgs),
    /// Run the offline evaluation protocol on a trained policy.
    Evaluate(EvaluateArgs),
    /// Cross-validated model selection over a hyperparameter grid.
    Select(SelectArgs),
    /// Simulation study of the evaluation protocol itself.
    ValidateProtocol(ValidateArgs),
    /// Importance sampling diagnostics over a grid of target means.
    Whatif(WhatIfArgs),
    /// Re-execute a run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvName {
    Noisymoons,
    Noisycircles,
    Anisotropic,
    WarfarinSim,
    Toy,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    env: EnvName,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Toy environment only: replace the last row by a low-propensity outlier.
    #[arg(long)]
    outlier: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Base training config (JSON); flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_family)]
    family: Option<Family>,
    #[arg(long, value_parser = parse_mean)]
    mean: Option<MeanKind>,
    #[arg(long, value_parser = parse_estimator)]
    estimator: Option<EstimatorKind>,
    #[arg(long = "M")]
    clip_m: Option<f64>,
    #[arg(long)]
    lambda_var: Option<f64>,
    #[arg(long)]
    lambda_ent: Option<f64>,
    #[arg(long)]
    c_reg: Option<f64>,
    #[arg(long)]
    prox_kappa: Option<f64>,
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long)]
    anchors: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Family used to describe the logging policy (defaults to lognormal when all actions are positive).
    #[arg(long, value_parser = parse_family)]
    logging_family: Option<Family>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test data; split in half into validation and test when `--valid` is absent.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    nu: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 100)]
    n_boot: usize,
    /// Reference risk; defaults to the mean test cost.
    #[arg(long)]
    logging_risk: Option<f64>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Grid description (JSON); defaults to the synthetic grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value_t = 0.01)]
    nu: f64,
    #[arg(long, value_parser = parse_family)]
    logging_family: Option<Family>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long, value_parser = parse_setup)]
    setup: crm_core::protocol::Setup,
    #[arg(long, default_value_t = 2000)]
    n_policies: usize,
    #[arg(long)]
    n_logged: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    n_boot: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct WhatIfArgs {
    /// Comma-separated target means; defaults to the logging mode ± `half-width` standard deviations.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 3.0)]
    half_width: f64,
    #[arg(long, default_value_t = 13)]
    points: usize,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: CrmError| e.to_string())
}

fn parse_mean(s: &str) -> Result<MeanKind, String> {
    s.parse().map_err(|e: CrmError| e.to_string())
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse().map_err(|e: CrmError| e.to_string())
}

fn parse_setup(s: &str) -> Result<crm_core::protocol::Setup, String> {
    s.parse().map_err(|e: CrmError| e.to_string())
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Generate(a) => commands::generate(commands::GenerateConfig::resolve(a, seed)),
        Command::Train(a) => commands::train(commands::TrainRun::resolve(a, seed)?),
        Command::Evaluate(a) => commands::evaluate(commands::EvaluateConfig::resolve(a, seed)),
        Command::Select(a) => commands::select(commands::SelectConfig::resolve(a, seed)?),
        Command::ValidateProtocol(a) => commands::validate(commands::ValidateConfig::resolve(a, seed)),
        Command::Whatif(a) => commands::whatif(commands::WhatIfRun::resolve(a, seed)),
        Command::Rerun { manifest } => commands::rerun(&manifest),
    }
}

/// Diagnostic failures and rejected inputs exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CrmError>() {
        Some(
            CrmError::Parse { .. }
            | CrmError::InvalidData(_)
            | CrmError::Config(_)
            | CrmError::Dimension { .. }
            | CrmError::NonFiniteWeight { .. }
            | CrmError::InvalidEstimate(_)
            | CrmError::NoEligibleCandidate(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::DiagnosticFailure) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
