#![allow(dead_code)]

use crm_core::embeddings::{ContextMap, ContextMapKind, JointEmbedding, NystromEmbedding};
use crm_core::stats::{self, Rng};
use crm_core::{Family, LoggedDataset, MeanKind, MeanModel, PolicyModel};
use rand::Rng as _;

pub const LOG_MEAN: f64 = 1.5;
pub const LOG_STD: f64 = 0.5;

/// Small logged dataset with 2-D contexts and lognormal logging.
pub fn random_dataset(n: usize, rng: &mut Rng) -> LoggedDataset {
    let (m, s) = stats::lognormal_moment_map(LOG_MEAN, LOG_STD);
    let mut ctx = Vec::with_capacity(2 * n);
    let mut acts = Vec::with_capacity(n);
    let mut props = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    for _ in 0..n {
        ctx.push(stats::std_normal(rng));
        ctx.push(stats::std_normal(rng));
        let a = (m + s * stats::std_normal(rng)).exp();
        acts.push(a);
        props.push(stats::lognormal_pdf(a, m, s));
        costs.push(rng.random_range(-1.0..0.5));
    }
    LoggedDataset::new(ctx, 2, acts, props, costs).unwrap()
}

pub fn random_policy(family: Family, kind: MeanKind, rng: &mut Rng) -> PolicyModel {
    let mut small = |scale: f64| scale * stats::std_normal(rng);
    let base = match family {
        Family::Normal => LOG_MEAN,
        Family::Lognormal => stats::softplus_inv(LOG_MEAN),
    };
    let mean = match kind {
        MeanKind::Constant => MeanModel::Constant { b: base + small(0.2) },
        MeanKind::Linear => MeanModel::Linear {
            beta: vec![small(0.2), small(0.2)],
            b: base + small(0.2),
        },
        MeanKind::Poly => MeanModel::poly((0..4).map(|_| small(0.1)).collect(), 2, base + small(0.2)).unwrap(),
        MeanKind::Ccp => {
            let m = 4;
            let anchors: Vec<f64> = (0..m).map(|i| 0.6 + 0.6 * i as f64 + small(0.05)).collect();
            let ne = NystromEmbedding::fit(&anchors, 1, 1.0 + small(0.1).abs()).unwrap();
            let je = JointEmbedding::new(ContextMap::new(ContextMapKind::Linear, 2, true), ne);
            let p = je.dim();
            MeanModel::ccp(je, 2.0 + small(0.5).abs(), (0..p).map(|_| small(0.3)).collect()).unwrap()
        }
        MeanKind::Greedy => unreachable!(),
    };
    PolicyModel::new(family, mean, (LOG_STD * (1.0 + small(0.2).abs())).ln()).unwrap()
}

/// Central finite-difference gradient with step `h`.
pub fn fd_grad<F: FnMut(&[f64]) -> f64>(mut f: F, theta: &[f64], h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            t[j] = theta[j] + h;
            let up = f(&t);
            t[j] = theta[j] - h;
            let dn = f(&t);
            t[j] = theta[j];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(floor)
}

pub const FAMILIES: [Family; 2] = [Family::Normal, Family::Lognormal];
pub const KINDS: [MeanKind; 4] = [MeanKind::Constant, MeanKind::Linear, MeanKind::Poly, MeanKind::Ccp];

/// Union of the clipping thresholds in the published hyperparameter grids.
pub const M_GRID: [f64; 15] = [
    1.0, 1.7, 2.1, 2.8, 4.5, 4.6, 7.7, 9.5, 10.0, 12.9, 20.0, 21.5, 35.9, 59.9, 100.0,
];
