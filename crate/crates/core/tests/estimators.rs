mod common;

use common::{fd_grad, random_dataset, random_policy, rel_err, FAMILIES, KINDS, M_GRID};
use crm_core::embeddings::{ContextMap, ContextMapKind, JointEmbedding, NystromEmbedding};
use crm_core::estimators::{
    dm_policy, estimate, estimate_from_weights, importance_weights, objective_value_grad, snips, soft_clip,
    solve_alpha, variance_from_weights, CostPredictor,
};
use crm_core::stats;
use crm_core::{CrmError, CrmObjective, EstimatorKind, Family, LoggedDataset, MeanModel, PolicyModel, StochasticPolicy};
use proptest::prelude::*;
use rand::Rng as _;

const WEIGHTED: [EstimatorKind; 4] = [EstimatorKind::Ips, EstimatorKind::Cips, EstimatorKind::Scips, EstimatorKind::Snips];

fn bisect_alpha(m: f64) -> f64 {
    let (mut lo, mut hi) = (1.0f64, 200.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * mid.ln() < m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn alpha_against_bisection() {
    assert!((solve_alpha(1.0).unwrap() - 1.763_222_834_351_896).abs() < 1e-12);
    for m in M_GRID {
        let a = solve_alpha(m).unwrap();
        assert!((a - bisect_alpha(m)).abs() < 1e-10 * a);
        assert!((a * a.ln() - m).abs() <= 1e-12, "M = {m}");
    }
}

#[test]
fn soft_clip_is_c1_at_threshold() {
    for m in M_GRID {
        let (below, d_below) = soft_clip(m, m).unwrap();
        let (above, d_above) = soft_clip(m * (1.0 + 1e-12), m).unwrap();
        assert!((below - above).abs() < 1e-10 * m, "M = {m}");
        assert!((d_below - d_above).abs() < 1e-10, "M = {m}");
        assert_eq!(soft_clip(1.0, m).unwrap().0, 1.0);
    }
}

#[test]
fn logging_policy_gives_mean_cost_for_every_estimator() {
    let mut rng = stats::rng(1);
    let ds = random_dataset(300, &mut rng);
    let logging = PolicyModel::new(
        Family::Lognormal,
        MeanModel::Constant {
            b: stats::softplus_inv(common::LOG_MEAN),
        },
        common::LOG_STD.ln(),
    )
    .unwrap();
    let ws = importance_weights(&logging, &ds).unwrap();
    assert!((ws.ess_ratio - 1.0).abs() < 1e-12);
    for kind in WEIGHTED {
        let v = estimate(&logging, &ds, &CrmObjective::bare(kind, 2.8)).unwrap();
        assert!((v - ds.mean_cost()).abs() < 1e-12, "{kind:?}");
    }
}

#[test]
fn ips_single_row() {
    let ds = LoggedDataset::new(vec![], 0, vec![1.0], vec![0.5], vec![-1.0]).unwrap();
    let pm = PolicyModel::new(Family::Normal, MeanModel::Constant { b: 1.0 }, (1.0 / (2.0 * std::f64::consts::PI).sqrt()).ln()).unwrap();
    // density at the mode is 1, propensity 0.5 → w = 2
    let obj = CrmObjective::bare(EstimatorKind::Ips, f64::INFINITY);
    assert!((estimate(&pm, &ds, &obj).unwrap() + 2.0).abs() < 1e-12);
    let (_, g) = objective_value_grad(&pm, &ds, &obj).unwrap();
    let mut score = vec![0.0; 2];
    pm.log_density_grad(&[], 1.0, &mut score);
    for j in 0..2 {
        assert!((g[j] - (-1.0) * 2.0 * score[j]).abs() < 1e-12);
    }
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let mut rng = stats::rng(33);
    for est in WEIGHTED {
        for family in FAMILIES {
            for kind in KINDS {
                let mut done = 0;
                while done < 25 {
                    let ds = random_dataset(40, &mut rng);
                    let pm = random_policy(family, kind, &mut rng);
                    let ws = importance_weights(&pm, &ds).unwrap();
                    let m = 1.0 + rng.random::<f64>() * 4.0;
                    // finite differences are meaningless across the hard-clip kink
                    if est == EstimatorKind::Cips && ws.weights.iter().any(|w| (w - m).abs() < 1e-3 * m) {
                        continue;
                    }
                    let obj = CrmObjective {
                        estimator: est,
                        clip_m: m,
                        lambda_var: rng.random_range(0.0..0.5),
                        lambda_ent: rng.random_range(0.0..0.1),
                        c_reg: rng.random_range(0.0..0.1),
                    };
                    let (_, g) = objective_value_grad(&pm, &ds, &obj).unwrap();
                    let mut work = pm.clone();
                    let fd = fd_grad(
                        |t| {
                            work.set_params(t);
                            objective_value_grad(&work, &ds, &obj).unwrap().0
                        },
                        &pm.params(),
                        1e-5,
                    );
                    let e = rel_err(&g, &fd, 1e-6);
                    assert!(e < 1e-4, "{est:?}/{family:?}/{kind:?}: {e}");
                    done += 1;
                }
            }
        }
    }
}

#[test]
fn hard_clip_below_all_weights_kills_mean_gradient() {
    let mut rng = stats::rng(2);
    let ds = random_dataset(50, &mut rng);
    let pm = PolicyModel::new(Family::Normal, MeanModel::Constant { b: 1.5 }, 0.05f64.ln()).unwrap();
    let ws = importance_weights(&pm, &ds).unwrap();
    let m = 1.0;
    let clipped: Vec<usize> = (0..ds.len()).filter(|&i| ws.weights[i] > m).collect();
    assert!(!clipped.is_empty());
    let obj = CrmObjective::bare(EstimatorKind::Cips, m);
    let (_, g) = objective_value_grad(&pm, &ds.subset(&clipped).unwrap(), &obj).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
    // soft clipping keeps a signal on the same rows
    let (_, gs) = objective_value_grad(&pm, &ds.subset(&clipped).unwrap(), &CrmObjective::bare(EstimatorKind::Scips, m)).unwrap();
    assert!(gs.iter().any(|&v| v != 0.0));
}

#[test]
fn variance_matches_two_pass_oracle() {
    let mut rng = stats::rng(3);
    for kind in [EstimatorKind::Ips, EstimatorKind::Cips, EstimatorKind::Scips] {
        let w: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..8.0)).collect();
        let y: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let obj = CrmObjective::bare(kind, 2.8);
        let alpha = solve_alpha(2.8).unwrap();
        let terms: Vec<f64> = w
            .iter()
            .zip(&y)
            .map(|(&wi, &yi)| {
                yi * match kind {
                    EstimatorKind::Ips => wi,
                    EstimatorKind::Cips => wi.min(2.8),
                    _ if wi <= 2.8 => wi,
                    _ => alpha * (wi + alpha - 2.8).ln(),
                }
            })
            .collect();
        let mean = terms.iter().sum::<f64>() / 200.0;
        let oracle = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 199.0;
        assert!((variance_from_weights(&obj, &w, &y).unwrap() - oracle).abs() < 1e-10);
    }
}

#[test]
fn ips_unbiased_at_desk_scale() {
    // π0 = N(0, 1), π = N(0.5, 0.8), cost = a²: L(π) = 0.25 + 0.64
    let truth = 0.89;
    let n = 100_000;
    let mut rng = stats::rng(77);
    let actions: Vec<f64> = (0..n).map(|_| stats::std_normal(&mut rng)).collect();
    let props: Vec<f64> = actions.iter().map(|&a| stats::normal_pdf(a, 0.0, 1.0)).collect();
    let costs: Vec<f64> = actions.iter().map(|a| a * a).collect();
    let ds = LoggedDataset::new(vec![], 0, actions, props, costs).unwrap();
    let pm = PolicyModel::new(Family::Normal, MeanModel::Constant { b: 0.5 }, 0.8f64.ln()).unwrap();
    let ws = importance_weights(&pm, &ds).unwrap();
    let terms: Vec<f64> = ws.weights.iter().zip(ds.costs()).map(|(w, y)| w * y).collect();
    let se = (stats::sample_variance(&terms) / n as f64).sqrt();
    let est = estimate(&pm, &ds, &CrmObjective::bare(EstimatorKind::Ips, f64::INFINITY)).unwrap();
    assert!((est - truth).abs() < 3.0 * se, "{est} vs {truth} (se {se})");
}

#[test]
fn ridge_matches_gradient_descent_oracle() {
    let mut rng = stats::rng(12);
    let ds = random_dataset(60, &mut rng);
    let ne = NystromEmbedding::fit(&[0.8, 1.5, 2.4], 1, 1.0).unwrap();
    let je = JointEmbedding::new(ContextMap::new(ContextMapKind::Linear, 2, true), ne);
    let c = 0.3;
    let cp = CostPredictor::fit(&ds, je.clone(), c).unwrap();
    let phi: Vec<Vec<f64>> = (0..ds.len())
        .map(|i| je.embed(ds.context(i), &[ds.actions()[i]]).unwrap())
        .collect();
    let p = je.dim();
    let mut beta = vec![0.0; p];
    // step below 1/L with L bounded by trace of the Hessian
    let lip: f64 = 2.0 * (phi.iter().flatten().map(|v| v * v).sum::<f64>() + c);
    for _ in 0..400_000 {
        let mut g: Vec<f64> = beta.iter().map(|b| 2.0 * c * b).collect();
        for (row, &y) in phi.iter().zip(ds.costs()) {
            let r = stats::dot(row, &beta) - y;
            for j in 0..p {
                g[j] += 2.0 * r * row[j];
            }
        }
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12 {
            break;
        }
        for j in 0..p {
            beta[j] -= g[j] / lip;
        }
    }
    for j in 0..p {
        assert!((beta[j] - cp.beta[j]).abs() < 1e-6, "coef {j}: {} vs {}", beta[j], cp.beta[j]);
    }
}

#[test]
fn ridge_interpolates_and_shrinks() {
    let mut rng = stats::rng(14);
    let ne = NystromEmbedding::fit(&[0.8, 1.5, 2.4], 1, 1.0).unwrap();
    let je = JointEmbedding::new(ContextMap::new(ContextMapKind::Linear, 2, true), ne);
    let truth: Vec<f64> = (0..je.dim()).map(|_| stats::std_normal(&mut rng)).collect();
    let base = random_dataset(80, &mut rng);
    let costs: Vec<f64> = (0..base.len())
        .map(|i| stats::dot(&truth, &je.embed(base.context(i), &[base.actions()[i]]).unwrap()))
        .collect();
    let ds = LoggedDataset::new(base.contexts().to_vec(), 2, base.actions().to_vec(), base.propensities().to_vec(), costs).unwrap();
    let cp = CostPredictor::fit(&ds, je.clone(), 0.0).unwrap();
    for i in 0..ds.len() {
        assert!((cp.predict(ds.context(i), ds.actions()[i]) - ds.costs()[i]).abs() < 1e-8);
    }
    let big = CostPredictor::fit(&ds, je, 1e12).unwrap();
    assert!(big.beta.iter().all(|b| b.abs() < 1e-6));
}

#[test]
fn direct_method_greedy_rules() {
    let ne = NystromEmbedding::fit(&[0.0, 1.0, 2.0], 1, 1.0).unwrap();
    let je = JointEmbedding::new(ContextMap::new(ContextMapKind::Linear, 1, true), ne);
    let flat = CostPredictor {
        embedding: je.clone(),
        beta: vec![0.0; je.dim()],
        ridge: 0.0,
    };
    let anchors = vec![2.0, 0.5, 1.0, 3.0];
    let pm = dm_policy(flat, anchors.clone(), 0.1).unwrap();
    assert_eq!(pm.location(&[0.3]), 0.5);

    // fit (a − p)² on a dense grid: the greedy action is the grid point p
    let p = 1.25;
    let grid: Vec<f64> = (0..=20).map(|i| 0.25 * i as f64 - 1.0).collect();
    let ne = NystromEmbedding::fit(&grid, 1, 4.0).unwrap();
    let je = JointEmbedding::new(ContextMap::new(ContextMapKind::Linear, 0, true), ne);
    let mut rng = stats::rng(3);
    let acts: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..4.0)).collect();
    let costs: Vec<f64> = acts.iter().map(|a| (a - p) * (a - p)).collect();
    let ds = LoggedDataset::new(vec![], 0, acts, vec![0.2; 400], costs).unwrap();
    let cp = CostPredictor::fit(&ds, je, 1e-8).unwrap();
    let pm = dm_policy(cp, grid, 1e-9).unwrap();
    assert_eq!(pm.location(&[]), p);
    let mut rng = stats::rng(4);
    assert!(pm.sample_many(&[], 100, &mut rng).iter().all(|a| (a - p).abs() < 1e-6));
}

#[test]
fn snips_with_no_mass_is_invalid() {
    let ds = LoggedDataset::new(vec![], 0, vec![-1.0, -2.0], vec![0.3, 0.3], vec![1.0, 2.0]).unwrap();
    let pm = PolicyModel::new(Family::Lognormal, MeanModel::Constant { b: 1.0 }, 0.0).unwrap();
    assert!(matches!(
        estimate(&pm, &ds, &CrmObjective::bare(EstimatorKind::Snips, f64::INFINITY)),
        Err(CrmError::InvalidEstimate(_))
    ));
}

proptest! {
    #[test]
    fn soft_clip_properties(w in 0.0f64..1e4, mi in 0usize..15) {
        let m = M_GRID[mi];
        let (z, dz) = soft_clip(w, m).unwrap();
        prop_assert!(z <= w + 1e-12);
        if w <= m { prop_assert_eq!(z, w.min(m)); }
        else {
            // increasing and concave on the log branch
            let (z2, dz2) = soft_clip(w + 1.0, m).unwrap();
            prop_assert!(z2 > z && dz2 < dz && dz > 0.0);
        }
    }

    #[test]
    fn snips_shift_equivariant(w in prop::collection::vec(0.0f64..20.0, 2..50), y in prop::collection::vec(-5.0f64..5.0, 50), c in -100.0f64..100.0) {
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let y = &y[..w.len()];
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let a = snips(&w, y).unwrap();
        let b = snips(&w, &shifted).unwrap();
        prop_assert!((b - a - c).abs() <= 1e-12 * (1.0 + c.abs() + a.abs()));
    }

    #[test]
    fn ess_bounds(w in prop::collection::vec(0.0f64..50.0, 1..60)) {
        prop_assume!(w.iter().any(|&v| v > 0.0));
        let ws = crm_core::WeightStats::from_weights(w.clone());
        prop_assert!(ws.ess >= 1.0 - 1e-12 && ws.ess <= w.len() as f64 + 1e-9);
        let all_equal = w.iter().all(|&v| v == w[0]);
        prop_assert_eq!((ws.ess_ratio - 1.0).abs() < 1e-12, all_equal || (ws.ess_ratio - 1.0).abs() < 1e-12);
        if all_equal { prop_assert!((ws.ess_ratio - 1.0).abs() < 1e-12); }
    }

    #[test]
    fn cips_tends_to_ips(w in prop::collection::vec(0.0f64..30.0, 1..40), y in prop::collection::vec(-1.0f64..1.0, 40)) {
        let y = &y[..w.len()];
        let ips = estimate_from_weights(&CrmObjective::bare(EstimatorKind::Ips, f64::INFINITY), &w, y).unwrap();
        let c = estimate_from_weights(&CrmObjective::bare(EstimatorKind::Cips, 1e6), &w, y).unwrap();
        prop_assert!((c - ips).abs() < 1e-12);
    }

    #[test]
    fn scips_not_below_ips_on_nonpositive_costs(w in prop::collection::vec(0.0f64..30.0, 1..40), y in prop::collection::vec(-1.0f64..0.0, 40), mi in 0usize..15) {
        let y = &y[..w.len()];
        let ips = estimate_from_weights(&CrmObjective::bare(EstimatorKind::Ips, f64::INFINITY), &w, y).unwrap();
        let sc = estimate_from_weights(&CrmObjective::bare(EstimatorKind::Scips, M_GRID[mi]), &w, y).unwrap();
        prop_assert!(sc >= ips - 1e-12);
    }
}
