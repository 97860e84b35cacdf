//! Context feature maps, Nyström action embeddings and their tensor product.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMapKind {
    Linear,
    Quadratic,
}

/// `ψ_X(x)`: either `x` or `(vec(x xᵀ), x)`, optionally followed by a constant 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextMap {
    pub kind: ContextMapKind,
    pub d_in: usize,
    #[serde(default)]
    pub intercept: bool,
}

impl ContextMap {
    pub fn new(kind: ContextMapKind, d_in: usize, intercept: bool) -> Self {
        Self { kind, d_in, intercept }
    }

    pub fn d_out(&self) -> usize {
        let base = match self.kind {
            ContextMapKind::Linear => self.d_in,
            ContextMapKind::Quadratic => self.d_in * self.d_in + self.d_in,
        };
        base + usize::from(self.intercept)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(CrmError::Dimension {
                expected: self.d_in,
                got: x.len(),
            });
        }
        let mut out = Vec::with_capacity(self.d_out());
        if self.kind == ContextMapKind::Quadratic {
            for &xi in x {
                out.extend(x.iter().map(|&xj| xi * xj));
            }
        }
        out.extend_from_slice(x);
        if self.intercept {
            out.push(1.0);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorStrategy {
    Grid,
    Quantile,
    Kmeans,
}

impl std::str::FromStr for AnchorStrategy {
    type Err = CrmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Self::Grid),
            "quantile" => Ok(Self::Quantile),
            "kmeans" => Ok(Self::Kmeans),
            _ => Err(CrmError::Config(format!("unknown anchor strategy {s:?}"))),
        }
    }
}

/// Picks `m` anchor actions from scalar logged actions. Output is sorted ascending.
pub fn select_anchors(actions: &[f64], m: usize, strategy: AnchorStrategy, seed: u64) -> Result<Vec<f64>> {
    if m == 0 || actions.is_empty() {
        return Err(CrmError::Config("need m >= 1 and a nonempty action set".into()));
    }
    let mut sorted = actions.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if m > distinct.len() {
        return Err(CrmError::Config(format!(
            "{m} anchors requested but only {} distinct actions",
            distinct.len()
        )));
    }
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let anchors = match strategy {
        AnchorStrategy::Grid if m == 1 => vec![0.5 * (lo + hi)],
        AnchorStrategy::Grid => (0..m)
            .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
            .collect(),
        AnchorStrategy::Quantile => (1..=m)
            .map(|i| stats::percentile_sorted(&sorted, (2 * i - 1) as f64 / (2 * m) as f64))
            .collect(),
        AnchorStrategy::Kmeans => {
            let mut c = kmeans(actions, 1, m, seed, 100);
            c.sort_by(f64::total_cmp);
            c
        }
    };
    if anchors.windows(2).any(|w| w[0] == w[1]) {
        return Err(CrmError::Config(format!(
            "{strategy:?} strategy produced coincident anchors {anchors:?}"
        )));
    }
    Ok(anchors)
}

/// Lloyd's algorithm with k-means++ seeding on row-major `points` of dimension `dim`.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64, max_iter: usize) -> Vec<f64> {
    let n = points.len() / dim;
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut rng = stats::rng(seed);

    let mut centers: Vec<f64> = pt(rng.random_range(0..n)).to_vec();
    let mut d2: Vec<f64> = (0..n).map(|i| sq(pt(i), &centers[..dim])).collect();
    while centers.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = pt(next).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq(pt(i), &c));
        }
        centers.extend(c);
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let best = (0..k)
                .min_by(|&p, &q| {
                    sq(pt(i), &centers[p * dim..(p + 1) * dim])
                        .total_cmp(&sq(pt(i), &centers[q * dim..(q + 1) * dim]))
                })
                .unwrap();
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for j in 0..dim {
                sums[c * dim + j] += pt(i)[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centers[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    centers
}

/// `1 / median²` of pairwise distances between (at most 1000 evenly strided) actions.
pub fn median_heuristic_bandwidth(actions: &[f64]) -> Result<f64> {
    let stride = actions.len().div_ceil(1000).max(1);
    let sub: Vec<f64> = actions.iter().step_by(stride).copied().collect();
    let mut dists = Vec::with_capacity(sub.len() * sub.len() / 2);
    for i in 0..sub.len() {
        for j in i + 1..sub.len() {
            let d = (sub[i] - sub[j]).abs();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return Err(CrmError::Config("median heuristic needs two distinct actions".into()));
    }
    dists.sort_by(f64::total_cmp);
    let med = stats::percentile_sorted(&dists, 0.5);
    Ok(1.0 / (med * med))
}

/// `ψ_A(a) = K_AA^{-1/2} K_A(a)` for the kernel `exp(-α/2 ‖a − a'‖²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NystromEmbedding {
    /// Row-major `m × dim`.
    pub anchors: Vec<f64>,
    pub dim: usize,
    pub bandwidth: f64,
    /// Row-major `m × m`.
    pub whitener: Vec<f64>,
}

pub const EIGEN_FLOOR: f64 = 1e-10;

impl NystromEmbedding {
    pub fn fit(anchors: &[f64], dim: usize, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(CrmError::Config(format!("kernel bandwidth must be positive, got {bandwidth}")));
        }
        if dim == 0 || anchors.is_empty() || anchors.len() % dim != 0 {
            return Err(CrmError::Config("anchor array does not match the action dimension".into()));
        }
        let m = anchors.len() / dim;
        let mut this = Self {
            anchors: anchors.to_vec(),
            dim,
            bandwidth,
            whitener: Vec::new(),
        };
        let mut gram = DMatrix::<f64>::zeros(m, m);
        let mut coincident = Vec::new();
        for i in 0..m {
            for j in 0..m {
                gram[(i, j)] = this.kernel(this.anchor(i), this.anchor(j));
            }
            for j in i + 1..m {
                if 1.0 - gram[(i, j)] < 1e-14 {
                    coincident.push((i, j));
                }
            }
        }
        if !coincident.is_empty() {
            return Err(CrmError::Singular(format!(
                "anchor pairs are numerically indistinguishable under the kernel: {coincident:?}"
            )));
        }
        let eig = SymmetricEigen::new(gram);
        let lmax = eig.eigenvalues.max();
        let floor = EIGEN_FLOOR * lmax;
        let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.max(floor).sqrt());
        let w = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
        this.whitener = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| 0.5 * (w[(i, j)] + w[(j, i)])).collect();
        Ok(this)
    }

    pub fn m(&self) -> usize {
        self.anchors.len() / self.dim
    }

    pub fn anchor(&self, i: usize) -> &[f64] {
        &self.anchors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-0.5 * self.bandwidth * d2).exp()
    }

    pub fn embed(&self, a: &[f64]) -> Vec<f64> {
        let m = self.m();
        let k: Vec<f64> = (0..m).map(|j| self.kernel(self.anchor(j), a)).collect();
        (0..m)
            .map(|i| stats::dot(&self.whitener[i * m..(i + 1) * m], &k))
            .collect()
    }

    pub fn embed_scalar(&self, a: f64) -> Vec<f64> {
        self.embed(&[a])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEmbedding {
    pub context_map: ContextMap,
    pub action: NystromEmbedding,
}

impl JointEmbedding {
    pub fn new(context_map: ContextMap, action: NystromEmbedding) -> Self {
        Self { context_map, action }
    }

    pub fn dim(&self) -> usize {
        self.context_map.d_out() * self.action.m()
    }

    /// Row-major flattening of `ψ_X(x) ψ_A(a)ᵀ`.
    pub fn embed(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.action.dim {
            return Err(CrmError::Dimension {
                expected: self.action.dim,
                got: a.len(),
            });
        }
        let px = self.context_map.apply(x)?;
        let pa = self.action.embed(a);
        Ok(outer(&px, &pa))
    }
}

pub fn outer(u: &[f64], v: &[f64]) -> Vec<f64> {
    u.iter().flat_map(|&ui| v.iter().map(move |&vj| ui * vj)).collect()
}
