//! Logged bandit feedback: storage, CSV persistence and splitting.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::stats;

/// Rows of `(context, action, propensity, cost)`. Contexts are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDataset {
    contexts: Vec<f64>,
    dim: usize,
    actions: Vec<f64>,
    propensities: Vec<f64>,
    costs: Vec<f64>,
}

impl LoggedDataset {
    pub fn new(
        contexts: Vec<f64>,
        dim: usize,
        actions: Vec<f64>,
        propensities: Vec<f64>,
        costs: Vec<f64>,
    ) -> Result<Self> {
        let n = actions.len();
        if n == 0 {
            return Err(CrmError::InvalidData("dataset has no rows".into()));
        }
        if propensities.len() != n || costs.len() != n {
            return Err(CrmError::InvalidData(format!(
                "column lengths differ: {} actions, {} propensities, {} costs",
                n,
                propensities.len(),
                costs.len()
            )));
        }
        if contexts.len() != n * dim {
            return Err(CrmError::Dimension {
                expected: n * dim,
                got: contexts.len(),
            });
        }
        for (i, &p) in propensities.iter().enumerate() {
            if !(p > 0.0 && p.is_finite()) {
                return Err(CrmError::InvalidData(format!(
                    "row {i}: propensity must be positive and finite, got {p}"
                )));
            }
        }
        if let Some(i) = actions.iter().position(|a| !a.is_finite()) {
            return Err(CrmError::InvalidData(format!("row {i}: non-finite action")));
        }
        if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
            return Err(CrmError::InvalidData(format!("row {i}: non-finite cost")));
        }
        if let Some(k) = contexts.iter().position(|c| !c.is_finite()) {
            return Err(CrmError::InvalidData(format!(
                "row {}: non-finite context",
                k / dim.max(1)
            )));
        }
        Ok(Self {
            contexts,
            dim,
            actions,
            propensities,
            costs,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn context(&self, i: usize) -> &[f64] {
        &self.contexts[i * self.dim..(i + 1) * self.dim]
    }

    pub fn contexts(&self) -> &[f64] {
        &self.contexts
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn propensities(&self) -> &[f64] {
        &self.propensities
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn mean_cost(&self) -> f64 {
        stats::mean(&self.costs)
    }

    /// Returns the rows at `idx` (repetitions allowed).
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut contexts = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            contexts.extend_from_slice(self.context(i));
        }
        Self::new(
            contexts,
            self.dim,
            idx.iter().map(|&i| self.actions[i]).collect(),
            idx.iter().map(|&i| self.propensities[i]).collect(),
            idx.iter().map(|&i| self.costs[i]).collect(),
        )
    }

    /// Same rows with every cost shifted by `c`.
    pub fn with_cost_shift(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.costs.iter_mut().for_each(|y| *y += c);
        out
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        if is_gz(path) {
            Self::read_csv(GzDecoder::new(BufReader::new(file)))
        } else {
            Self::read_csv(BufReader::new(file))
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 {
            return Err(CrmError::Parse {
                line: 1,
                msg: "header needs at least action,propensity,cost".into(),
            });
        }
        let d = cols.len() - 3;
        for (j, c) in cols[..d].iter().enumerate() {
            if *c != format!("x{j}") {
                return Err(CrmError::Parse {
                    line: 1,
                    msg: format!("expected column x{j}, found {c:?}"),
                });
            }
        }
        if cols[d..] != ["action", "propensity", "cost"] {
            return Err(CrmError::Parse {
                line: 1,
                msg: format!("expected trailing columns action,propensity,cost, found {:?}", &cols[d..]),
            });
        }

        let mut contexts = Vec::new();
        let mut actions = Vec::new();
        let mut propensities = Vec::new();
        let mut costs = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                CrmError::Parse {
                    line,
                    msg: e.to_string(),
                }
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != d + 3 {
                return Err(CrmError::Parse {
                    line,
                    msg: format!("expected {} fields, found {}", d + 3, rec.len()),
                });
            }
            let mut vals = Vec::with_capacity(d + 3);
            for field in rec.iter() {
                let v: f64 = field.parse().map_err(|_| CrmError::Parse {
                    line,
                    msg: format!("not a number: {field:?}"),
                })?;
                vals.push(v);
            }
            contexts.extend_from_slice(&vals[..d]);
            actions.push(vals[d]);
            propensities.push(vals[d + 1]);
            costs.push(vals[d + 2]);
        }
        Self::new(contexts, d, actions, propensities, costs)
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path)?;
        if is_gz(path) {
            let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
            self.write_csv(&mut enc)?;
            enc.finish()?.flush()?;
        } else {
            let mut w = BufWriter::new(file);
            self.write_csv(&mut w)?;
            w.flush()?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        header.extend(["action", "propensity", "cost"].map(String::from));
        wtr.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(self.dim + 3);
        for i in 0..self.len() {
            row.clear();
            // `{:?}` on f64 prints the shortest round-tripping representation
            row.extend(self.context(i).iter().map(|v| format!("{v:?}")));
            row.push(format!("{:?}", self.actions[i]));
            row.push(format!("{:?}", self.propensities[i]));
            row.push(format!("{:?}", self.costs[i]));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Seeded shuffle-and-split into train/valid/test.
    pub fn split(&self, fractions: (f64, f64, f64), seed: u64) -> Result<DataSplit> {
        let (f0, f1, f2) = fractions;
        if !(f0 > 0.0 && f1 > 0.0 && f2 > 0.0) || ((f0 + f1 + f2) - 1.0).abs() > 1e-9 {
            return Err(CrmError::Config(format!(
                "split fractions must be positive and sum to 1, got {fractions:?}"
            )));
        }
        let n = self.len();
        let n_train = (f0 * n as f64).round() as usize;
        let n_valid = (f1 * n as f64).round() as usize;
        if n_train == 0 || n_valid == 0 || n_train + n_valid >= n {
            return Err(CrmError::InvalidData(format!(
                "{n} rows are too few to split with fractions {fractions:?}"
            )));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut stats::rng(seed));
        let train_idx = perm[..n_train].to_vec();
        let valid_idx = perm[n_train..n_train + n_valid].to_vec();
        let test_idx = perm[n_train + n_valid..].to_vec();
        Ok(DataSplit {
            train: self.subset(&train_idx)?,
            valid: self.subset(&valid_idx)?,
            test: self.subset(&test_idx)?,
            train_idx,
            valid_idx,
            test_idx,
            seed,
        })
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: LoggedDataset,
    pub valid: LoggedDataset,
    pub test: LoggedDataset,
    pub train_idx: Vec<usize>,
    pub valid_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// Seeded assignment of `n` rows to `k` folds; returns the held-out indices per fold.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(CrmError::Config(format!("cannot make {k} folds from {n} rows")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stats::rng(seed));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in perm.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    Ok(folds)
}
