//! Counterfactual risk estimators, weight diagnostics and the full CRM objective.

mod dm;

pub use dm::{dm_estimate, dm_policy, CostPredictor};

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::error::{CrmError, Result};
use crate::policies::StochasticPolicy;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ips,
    Cips,
    Scips,
    Snips,
    Dm,
    Sdm,
}

impl std::str::FromStr for EstimatorKind {
    type Err = CrmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ips" => Ok(Self::Ips),
            "cips" => Ok(Self::Cips),
            "scips" => Ok(Self::Scips),
            "snips" => Ok(Self::Snips),
            "dm" => Ok(Self::Dm),
            "sdm" => Ok(Self::Sdm),
            _ => Err(CrmError::Config(format!("unknown estimator {s:?}"))),
        }
    }
}

fn default_m() -> f64 {
    f64::INFINITY
}

fn default_lambda_ent() -> f64 {
    1e-3
}

/// JSON has no infinity; an absent clipping threshold is written as `null`.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrmObjective {
    pub estimator: EstimatorKind,
    #[serde(rename = "M", default = "default_m", with = "unbounded")]
    pub clip_m: f64,
    #[serde(default)]
    pub lambda_var: f64,
    #[serde(default = "default_lambda_ent")]
    pub lambda_ent: f64,
    #[serde(rename = "C_reg", default)]
    pub c_reg: f64,
}

impl CrmObjective {
    pub fn new(estimator: EstimatorKind) -> Self {
        Self {
            estimator,
            clip_m: f64::INFINITY,
            lambda_var: 0.0,
            lambda_ent: default_lambda_ent(),
            c_reg: 0.0,
        }
    }

    /// Plain estimator value: no variance, entropy or ℓ2 terms.
    pub fn bare(estimator: EstimatorKind, clip_m: f64) -> Self {
        Self {
            estimator,
            clip_m,
            lambda_var: 0.0,
            lambda_ent: 0.0,
            c_reg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.estimator, EstimatorKind::Cips | EstimatorKind::Scips) && !(self.clip_m >= 1.0) {
            return Err(CrmError::Config(format!("clipping threshold M must be >= 1, got {}", self.clip_m)));
        }
        for (name, v) in [
            ("lambda_var", self.lambda_var),
            ("lambda_ent", self.lambda_ent),
            ("C_reg", self.c_reg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CrmError::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub weights: Vec<f64>,
    pub mean_weight: f64,
    pub ess: f64,
    pub ess_ratio: f64,
    pub max_weight: f64,
}

impl WeightStats {
    pub fn from_weights(weights: Vec<f64>) -> Self {
        let n = weights.len() as f64;
        let s: f64 = weights.iter().sum();
        let s2: f64 = weights.iter().map(|w| w * w).sum();
        let ess = if s2 > 0.0 { s * s / s2 } else { 0.0 };
        Self {
            mean_weight: s / n,
            ess,
            ess_ratio: ess / n,
            max_weight: weights.iter().copied().fold(0.0, f64::max),
            weights,
        }
    }
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    WeightStats::from_weights(weights.to_vec()).ess
}

const CHUNK: usize = 512;

/// Maps fixed-size row chunks in parallel; results come back in chunk order so that any
/// subsequent sequential reduction is independent of the thread count.
fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(n)))
        .collect()
}

pub fn importance_weights<P: StochasticPolicy>(pm: &P, ds: &LoggedDataset) -> Result<WeightStats> {
    let parts = map_chunks(ds.len(), |r| {
        r.map(|i| {
            let w = (pm.log_density(ds.context(i), ds.actions()[i]) - ds.propensities()[i].ln()).exp();
            if w.is_finite() {
                Ok(w)
            } else {
                Err(CrmError::NonFiniteWeight { row: i })
            }
        })
        .collect::<Result<Vec<f64>>>()
    });
    let mut weights = Vec::with_capacity(ds.len());
    for p in parts {
        weights.extend(p?);
    }
    Ok(WeightStats::from_weights(weights))
}

/// Solves `α ln α = M` for `M >= 1` by Newton's method started right of the root.
pub fn solve_alpha(m: f64) -> Result<f64> {
    if !(m >= 1.0 && m.is_finite()) {
        return Err(CrmError::Config(format!("soft clipping needs a finite M >= 1, got {m}")));
    }
    let f = |a: f64| a * a.ln() - m;
    let mut hi = m.max(std::f64::consts::E);
    let mut lo = 1.0;
    let mut a = hi;
    for _ in 0..200 {
        let fa = f(a);
        if fa == 0.0 {
            break;
        }
        if fa > 0.0 {
            hi = a;
        } else {
            lo = a;
        }
        let mut next = a - fa / (a.ln() + 1.0);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - a).abs() <= 1e-15 * a {
            a = next;
            break;
        }
        a = next;
    }
    Ok(a)
}

/// The logarithmic soft-clipping map `ζ(·, M)` with its constant `α_M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftClip {
    pub m: f64,
    pub alpha: f64,
}

impl SoftClip {
    pub fn new(m: f64) -> Result<Self> {
        Ok(Self { m, alpha: solve_alpha(m)? })
    }

    /// `(ζ(w), ζ'(w))`.
    pub fn apply(&self, w: f64) -> (f64, f64) {
        if w <= self.m {
            (w, 1.0)
        } else {
            let z = w + self.alpha - self.m;
            (self.alpha * z.ln(), self.alpha / z)
        }
    }
}

pub fn soft_clip(w: f64, m: f64) -> Result<(f64, f64)> {
    Ok(SoftClip::new(m)?.apply(w))
}

/// Per-row clipped term and its derivative with respect to `w`.
#[derive(Debug, Clone, Copy)]
enum Terms {
    Plain,
    Hard(f64),
    Soft(SoftClip),
}

impl Terms {
    fn for_objective(obj: &CrmObjective) -> Result<Self> {
        obj.validate()?;
        Ok(match obj.estimator {
            EstimatorKind::Ips | EstimatorKind::Snips => Self::Plain,
            EstimatorKind::Cips => Self::Hard(obj.clip_m),
            EstimatorKind::Scips => Self::Soft(SoftClip::new(obj.clip_m)?),
            EstimatorKind::Dm | EstimatorKind::Sdm => {
                return Err(CrmError::Config(
                    "direct-method estimators need a cost predictor; use dm_estimate".into(),
                ))
            }
        })
    }

    /// `(c(w), c'(w))`; the hard clip has zero derivative above the threshold.
    fn clip(&self, w: f64) -> (f64, f64) {
        match *self {
            Self::Plain => (w, 1.0),
            Self::Hard(m) => {
                if w <= m {
                    (w, 1.0)
                } else {
                    (m, 0.0)
                }
            }
            Self::Soft(sc) => sc.apply(w),
        }
    }
}

/// Estimator value from precomputed weights.
pub fn estimate_from_weights(obj: &CrmObjective, weights: &[f64], costs: &[f64]) -> Result<f64> {
    let terms = Terms::for_objective(obj)?;
    if obj.estimator == EstimatorKind::Snips {
        return snips(weights, costs);
    }
    let ts: Vec<f64> = weights.iter().zip(costs).map(|(&w, &y)| y * terms.clip(w).0).collect();
    Ok(stats::mean(&ts))
}

pub fn snips(weights: &[f64], costs: &[f64]) -> Result<f64> {
    let sw: f64 = weights.iter().sum();
    if !(sw > 0.0) {
        return Err(CrmError::InvalidEstimate("sum of importance weights is zero".into()));
    }
    Ok(weights.iter().zip(costs).map(|(w, y)| w * y).sum::<f64>() / sw)
}

pub fn estimate<P: StochasticPolicy>(pm: &P, ds: &LoggedDataset, obj: &CrmObjective) -> Result<f64> {
    let ws = importance_weights(pm, ds)?;
    estimate_from_weights(obj, &ws.weights, ds.costs())
}

/// Sample variance of the per-row terms (clipped terms for cips/scips, `y·w` otherwise).
pub fn variance_from_weights(obj: &CrmObjective, weights: &[f64], costs: &[f64]) -> Result<f64> {
    let terms = Terms::for_objective(obj)?;
    if weights.len() < 2 {
        return Err(CrmError::InvalidData("variance penalty needs at least two rows".into()));
    }
    let ts: Vec<f64> = weights.iter().zip(costs).map(|(&w, &y)| y * terms.clip(w).0).collect();
    Ok(stats::sample_variance(&ts))
}

pub fn variance_penalty<P: StochasticPolicy>(pm: &P, ds: &LoggedDataset, obj: &CrmObjective) -> Result<f64> {
    let ws = importance_weights(pm, ds)?;
    variance_from_weights(obj, &ws.weights, ds.costs())
}

struct Partial {
    ts: Vec<f64>,
    sum_w: f64,
    sum_wy: f64,
    g_dt: Vec<f64>,
    g_tdt: Vec<f64>,
    g_ws: Vec<f64>,
    ent: f64,
    g_ent: Vec<f64>,
}

/// Full objective `estimate + λ_var·V̂ + C_reg·‖mean params‖² − λ_ent·mean entropy` and its gradient.
pub fn objective_value_grad<P: StochasticPolicy>(
    pm: &P,
    ds: &LoggedDataset,
    obj: &CrmObjective,
) -> Result<(f64, Vec<f64>)> {
    let terms = Terms::for_objective(obj)?;
    let p = pm.n_params();
    let n = ds.len();
    let want_var = obj.lambda_var > 0.0;
    let want_ent = obj.lambda_ent > 0.0;
    if want_var && n < 2 {
        return Err(CrmError::InvalidData("variance penalty needs at least two rows".into()));
    }

    let parts = map_chunks(n, |r| -> Result<Partial> {
        let mut part = Partial {
            ts: Vec::with_capacity(r.len()),
            sum_w: 0.0,
            sum_wy: 0.0,
            g_dt: vec![0.0; p],
            g_tdt: vec![0.0; if want_var { p } else { 0 }],
            g_ws: vec![0.0; p],
            ent: 0.0,
            g_ent: vec![0.0; if want_ent { p } else { 0 }],
        };
        let mut score = vec![0.0; p];
        for i in r {
            let x = ds.context(i);
            let y = ds.costs()[i];
            let logp = pm.log_density_grad(x, ds.actions()[i], &mut score);
            let w = (logp - ds.propensities()[i].ln()).exp();
            if !w.is_finite() {
                return Err(CrmError::NonFiniteWeight { row: i });
            }
            let (c, dc) = terms.clip(w);
            let t = y * c;
            // d t / dθ = y · c'(w) · w · score
            let k = y * dc * w;
            part.ts.push(t);
            part.sum_w += w;
            part.sum_wy += w * y;
            if w > 0.0 {
                for j in 0..p {
                    part.g_dt[j] += k * score[j];
                    part.g_ws[j] += w * score[j];
                }
                if want_var {
                    for j in 0..p {
                        part.g_tdt[j] += t * k * score[j];
                    }
                }
            }
            if want_ent {
                part.ent += pm.entropy_grad(x, &mut score);
                for j in 0..p {
                    part.g_ent[j] += score[j];
                }
            }
        }
        Ok(part)
    });

    let mut ts = Vec::with_capacity(n);
    let (mut sum_w, mut sum_wy, mut ent) = (0.0, 0.0, 0.0);
    let mut g_dt = vec![0.0; p];
    let mut g_tdt = vec![0.0; p];
    let mut g_ws = vec![0.0; p];
    let mut g_ent = vec![0.0; p];
    for part in parts {
        let part = part?;
        ts.extend(part.ts);
        sum_w += part.sum_w;
        sum_wy += part.sum_wy;
        ent += part.ent;
        for j in 0..p {
            g_dt[j] += part.g_dt[j];
            g_ws[j] += part.g_ws[j];
            if want_var {
                g_tdt[j] += part.g_tdt[j];
            }
            if want_ent {
                g_ent[j] += part.g_ent[j];
            }
        }
    }

    let nf = n as f64;
    let (mut value, mut grad) = if obj.estimator == EstimatorKind::Snips {
        if !(sum_w > 0.0) {
            return Err(CrmError::InvalidEstimate("sum of importance weights is zero".into()));
        }
        let l = sum_wy / sum_w;
        let g: Vec<f64> = (0..p).map(|j| (g_dt[j] - l * g_ws[j]) / sum_w).collect();
        (l, g)
    } else {
        (stats::mean(&ts), g_dt.iter().map(|g| g / nf).collect())
    };

    if want_var {
        let tbar = stats::mean(&ts);
        value += obj.lambda_var * stats::sample_variance(&ts);
        for j in 0..p {
            grad[j] += obj.lambda_var * 2.0 * (g_tdt[j] - tbar * g_dt[j]) / (nf - 1.0);
        }
    }
    if want_ent {
        value -= obj.lambda_ent * ent / nf;
        for j in 0..p {
            grad[j] -= obj.lambda_ent * g_ent[j] / nf;
        }
    }
    if obj.c_reg > 0.0 {
        let theta = pm.params();
        for j in 0..pm.n_mean_params() {
            value += obj.c_reg * theta[j] * theta[j];
            grad[j] += 2.0 * obj.c_reg * theta[j];
        }
    }
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(CrmError::NonFinite { theta: pm.params() });
    }
    Ok((value, grad))
}
