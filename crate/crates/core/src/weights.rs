//! Rule-match features and pre-training of the per-rule weights by
//! regularized binary classification.

use std::path::Path;

use log::debug;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::binio::{self, BinReader, BinWriter};
use crate::dataset::Interaction;
use crate::error::{Error, Result};
use crate::kg::AugmentedGraph;
use crate::optim::Adam;
use crate::rules::{match_rule, RuleSet};
use crate::seed;

/// 0/1 rule-match indicators, one row per labeled user-item pair and one
/// column per rule in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<u8>,
    labels: Vec<f64>,
    rule_checksum: u64,
}

/// Digest of the rule order, so cached features are never paired with a
/// different rule set.
pub fn rule_checksum(rules: &RuleSet) -> u64 {
    let mut h = Sha256::new();
    for r in rules.rules() {
        h.update((r.len() as u32).to_le_bytes());
        for p in r.body() {
            h.update(p.0.to_le_bytes());
        }
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<u8>, labels: Vec<f64>, rule_checksum: u64) -> Result<Self> {
        if values.len() != rows * cols || labels.len() != rows || values.iter().any(|&v| v > 1) {
            return Err(Error::Data("malformed feature matrix".into()));
        }
        Ok(FeatureMatrix {
            rows,
            cols,
            values,
            labels,
            rule_checksum,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn rule_checksum(&self) -> u64 {
        self.rule_checksum
    }

    /// Same rows with columns reordered: column `j` of the result is column
    /// `perm[j]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> FeatureMatrix {
        let values = (0..self.rows)
            .flat_map(|i| perm.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.values[i * self.cols + j])
            .collect();
        FeatureMatrix {
            values,
            ..self.clone()
        }
    }

    const MAGIC: &'static [u8; 4] = b"RGFM";
    const VERSION: u32 = 1;

    /// Writes the matrix as a packed bitmap.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BinWriter::new(Self::MAGIC, Self::VERSION);
        w.u64(self.rule_checksum);
        w.u64(self.rows as u64);
        w.u64(self.cols as u64);
        let mut bits = vec![0u8; self.values.len().div_ceil(8)];
        for (i, &v) in self.values.iter().enumerate() {
            bits[i / 8] |= v << (i % 8);
        }
        w.bytes(&bits);
        w.f64s(&self.labels);
        w.write_to(path)
    }

    /// Reads a bitmap written by [`FeatureMatrix::save`]; a different rule
    /// order is reported as a stale artifact.
    pub fn load(path: impl AsRef<Path>, rules: &RuleSet) -> Result<Self> {
        let path = path.as_ref();
        let bytes = binio::read_file(path)?;
        let mut r = BinReader::open(&bytes, path, Self::MAGIC, Self::VERSION)?;
        let checksum = r.u64()?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let bits = r.bytes()?;
        let labels = r.f64s()?;
        r.finish()?;
        if checksum != rule_checksum(rules) || cols != rules.len() {
            return Err(Error::StaleArtifact(format!(
                "{}: features were extracted for a different rule set",
                path.display()
            )));
        }
        let n = rows * cols;
        if bits.len() != n.div_ceil(8) || labels.len() != rows {
            return Err(Error::corrupt(path, "feature bitmap size disagrees with header"));
        }
        let values = (0..n).map(|i| (bits[i / 8] >> (i % 8)) & 1).collect();
        FeatureMatrix::new(rows, cols, values, labels, checksum)
    }
}

/// Entry `(i, j)` is 1 when rule `j` connects the user and item of pair `i`.
pub fn extract_features(g: &AugmentedGraph, pairs: &[Interaction], rules: &RuleSet) -> FeatureMatrix {
    let rule_list: Vec<_> = rules.rules().collect();
    let values: Vec<u8> = pairs
        .par_iter()
        .flat_map_iter(|rec| {
            let u = g.user_entity(rec.user);
            let m = g.item_entity(rec.item);
            rule_list.iter().map(move |r| u8::from(match_rule(g, u, m, r)))
        })
        .collect();
    FeatureMatrix {
        rows: pairs.len(),
        cols: rule_list.len(),
        values,
        labels: pairs.iter().map(Interaction::label).collect(),
        rule_checksum: rule_checksum(rules),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub max_epochs: usize,
    /// Relative loss change below which an epoch counts as a plateau.
    pub tolerance: f64,
    pub plateau_epochs: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            learning_rate: 1e-4,
            batch_size: 256,
            lambda: 1e-4,
            max_epochs: 200,
            tolerance: 1e-6,
            plateau_epochs: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleWeights {
    pub w: Vec<f64>,
    pub lambda: f64,
    pub epochs: usize,
    pub final_loss: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn l2(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(w: &[f64], row: &[u8]) -> f64 {
    w.iter().zip(row).filter(|(_, &x)| x == 1).map(|(w, _)| w).sum()
}

/// `mean (l - σ(w·x))² + λ‖w‖₂` over the given rows.
pub fn pretrain_loss(x: &FeatureMatrix, rows: &[usize], w: &[f64], lambda: f64) -> f64 {
    let mse = rows
        .iter()
        .map(|&i| {
            let d = x.labels[i] - sigmoid(dot(w, x.row(i)));
            d * d
        })
        .sum::<f64>()
        / rows.len() as f64;
    mse + lambda * l2(w)
}

/// Loss and gradient over the given rows; the regularizer contributes zero
/// at `w = 0`.
pub fn pretrain_loss_and_gradient(x: &FeatureMatrix, rows: &[usize], w: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let n = rows.len() as f64;
    let mut grad = vec![0.0; w.len()];
    let mut mse = 0.0;
    for &i in rows {
        let row = x.row(i);
        let p = sigmoid(dot(w, row));
        let d = x.labels[i] - p;
        mse += d * d;
        let c = -2.0 * d * p * (1.0 - p) / n;
        for (g, &v) in grad.iter_mut().zip(row) {
            if v == 1 {
                *g += c;
            }
        }
    }
    let norm = l2(w);
    if norm > 0.0 {
        for (g, wi) in grad.iter_mut().zip(w) {
            *g += lambda * wi / norm;
        }
    }
    (mse / n + lambda * norm, grad)
}

/// Fits the rule weights from zeros with mini-batch Adam, stopping after
/// `plateau_epochs` consecutive epochs of negligible loss change. Returns
/// the weights of the epoch with the lowest full-data loss.
pub fn pretrain_weights(x: &FeatureMatrix, cfg: &PretrainConfig) -> Result<RuleWeights> {
    if x.rows == 0 {
        return Err(Error::Data("no training pairs for rule weight pre-training".into()));
    }
    if cfg.batch_size == 0 || cfg.learning_rate <= 0.0 || cfg.lambda < 0.0 {
        return Err(Error::Config(format!("invalid pre-training configuration {cfg:?}")));
    }
    let all: Vec<usize> = (0..x.rows).collect();
    let mut w = vec![0.0; x.cols];
    let mut best = (pretrain_loss(x, &all, &w, cfg.lambda), w.clone());
    let mut prev = best.0;
    let mut adam = Adam::new(x.cols, cfg.learning_rate);
    let mut rng = seed::derived_rng(cfg.seed, &[seed::tag("pretrain")]);
    let mut order = all.clone();
    let mut plateau = 0;
    let mut epochs = 0;
    while epochs < cfg.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grad) = pretrain_loss_and_gradient(x, batch, &w, cfg.lambda);
            adam.step(&mut w, &grad);
        }
        let loss = pretrain_loss(x, &all, &w, cfg.lambda);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "rule weight loss became {loss} in epoch {epochs}"
            )));
        }
        debug!("pretrain epoch {epochs}: loss {loss:.8}");
        if loss < best.0 {
            best = (loss, w.clone());
        }
        let change = (prev - loss).abs() / prev.abs().max(f64::MIN_POSITIVE);
        plateau = if change < cfg.tolerance { plateau + 1 } else { 0 };
        prev = loss;
        if plateau >= cfg.plateau_epochs {
            break;
        }
    }
    Ok(RuleWeights {
        w: best.1,
        lambda: cfg.lambda,
        epochs,
        final_loss: best.0,
    })
}
