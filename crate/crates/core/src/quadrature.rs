//! Gauss quadrature rules built with the Golub–Welsch eigenvalue method.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a Gauss rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn golub_welsch(off_diag: &[f64], mu0: f64) -> Rule {
    let n = off_diag.len() + 1;
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for (k, &b) in off_diag.iter().enumerate() {
        jacobi[(k, k + 1)] = b;
        jacobi[(k + 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Physicists' Gauss–Hermite rule: `∫ f(x) exp(-x²) dx ≈ Σ w_i f(x_i)`.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    let off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    golub_welsch(&off, std::f64::consts::PI.sqrt())
}

/// Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&off, 2.0)
}

/// `E[f(X)]` for `X ~ N(mean, sd²)` via an `n`-point Gauss–Hermite rule.
pub fn normal_expectation<F: Fn(f64) -> f64>(f: F, mean: f64, sd: f64, n: usize) -> f64 {
    let rule = gauss_hermite(n);
    let scale = std::f64::consts::SQRT_2 * sd;
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(x, w)| w * f(mean + scale * x))
        .sum::<f64>()
        / std::f64::consts::PI.sqrt()
}

/// Composite Gauss–Legendre integral of `f` over `[a, b]` with `panels` equal panels.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, rule: &Rule) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        total += rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * f(mid + 0.5 * h * x))
            .sum::<f64>()
            * 0.5
            * h;
    }
    total
}
