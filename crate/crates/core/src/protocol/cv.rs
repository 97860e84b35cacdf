use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{kfold_indices, LoggedDataset};
use crate::error::{CrmError, Result};
use crate::estimators::{importance_weights, snips};
use crate::policies::{LoggingDescription, StochasticPolicy};
use crate::stats;
use crate::train::{train_policy, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub candidate: usize,
    pub fold: usize,
    pub snips: Option<f64>,
    pub ess_ratio: f64,
    pub kept: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: usize,
    /// Mean held-out SNIPS cost over surviving folds; `None` when every fold was discarded.
    pub scores: Vec<Option<f64>>,
    pub folds: Vec<FoldRecord>,
}

/// k-fold model selection that discards folds whose held-out ESS ratio is at most `nu`.
pub fn cross_validate(
    candidates: &[TrainConfig],
    ds: &LoggedDataset,
    logging: &LoggingDescription,
    k_folds: usize,
    nu: f64,
    seed: u64,
) -> Result<CvResult> {
    cross_validate_with(candidates, ds, k_folds, nu, seed, |cfg, train, s| {
        train_policy(cfg, train, logging, s).map(|r| r.0)
    })
}

pub fn cross_validate_with<P, T>(
    candidates: &[TrainConfig],
    ds: &LoggedDataset,
    k_folds: usize,
    nu: f64,
    seed: u64,
    trainer: T,
) -> Result<CvResult>
where
    P: StochasticPolicy,
    T: Fn(&TrainConfig, &LoggedDataset, u64) -> Result<P> + Sync,
{
    if candidates.is_empty() {
        return Err(CrmError::Config("no candidates to cross-validate".into()));
    }
    let folds = kfold_indices(ds.len(), k_folds, seed)?;
    let mut splits = Vec::with_capacity(k_folds);
    for (f, held) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        splits.push((ds.subset(&train_idx)?, ds.subset(held)?));
    }

    let jobs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..k_folds).map(move |f| (c, f)))
        .collect();
    let records: Vec<FoldRecord> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (train, held) = &splits[f];
            let outcome = trainer(&candidates[c], train, stats::derive_seed(seed, f as u64)).and_then(|pm| {
                let ws = importance_weights(&pm, held)?;
                Ok((snips(&ws.weights, held.costs()).ok(), ws.ess_ratio))
            });
            match outcome {
                Ok((est, ess_ratio)) => FoldRecord {
                    candidate: c,
                    fold: f,
                    kept: est.is_some() && ess_ratio > nu,
                    snips: est,
                    ess_ratio,
                    error: None,
                },
                Err(e) => FoldRecord {
                    candidate: c,
                    fold: f,
                    snips: None,
                    ess_ratio: 0.0,
                    kept: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let scores: Vec<Option<f64>> = (0..candidates.len())
        .map(|c| {
            let kept: Vec<f64> = records
                .iter()
                .filter(|r| r.candidate == c && r.kept)
                .filter_map(|r| r.snips)
                .collect();
            (!kept.is_empty()).then(|| stats::mean(&kept))
        })
        .collect();

    let best = (0..candidates.len())
        .filter_map(|c| scores[c].map(|s| (c, s)))
        .min_by(|a, b| {
            let (ca, cb) = (&candidates[a.0].objective, &candidates[b.0].objective);
            a.1.total_cmp(&b.1)
                .then(ca.clip_m.total_cmp(&cb.clip_m))
                .then(ca.lambda_var.total_cmp(&cb.lambda_var))
                .then(a.0.cmp(&b.0))
        })
        .map(|(c, _)| c)
        .ok_or_else(|| {
            CrmError::NoEligibleCandidate(
                "every fold of every candidate failed the ESS check; initialize closer to the logging policy"
                    .into(),
            )
        })?;
    Ok(CvResult {
        best,
        scores,
        folds: records,
    })
}
