//! CTR metrics (AUC, F1) and top-k metrics (Hits@k, NDCG@k), plus repeated
//! evaluation of a trained model.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::{ctr_set, sample_topk_candidates, InteractionSet, PositiveIndex};
use crate::error::{Error, Result};
use crate::kg::AugmentedGraph;
use crate::model::RgRecModel;
use crate::seed;

/// Probability that a random positive outscores a random negative, ties
/// counting one half, computed from midranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("AUC needs both positive and negative examples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * midrank;
        i = j + 1;
    }
    let pos = pos as f64;
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg as f64))
}

/// F1 of predicting positive when `score >= threshold`; 0 when nothing is
/// predicted positive.
pub fn f1(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            (false, false) => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fneg);
    2.0 * precision * recall / (precision + recall)
}

/// 1 + negatives scoring higher + half of the tied negatives.
pub fn rank_of(positive: f64, negatives: &[f64]) -> f64 {
    let greater = negatives.iter().filter(|&&s| s > positive).count() as f64;
    let ties = negatives.iter().filter(|&&s| s == positive).count() as f64;
    1.0 + greater + 0.5 * ties
}

/// `(hits@k, ndcg@k)` averaged over the ranks of the held-out positives.
pub fn rank_metrics(ranks: &[f64], k: usize) -> (f64, f64) {
    assert!(k >= 1);
    if ranks.is_empty() {
        return (0.0, 0.0);
    }
    let k = k as f64;
    let (mut hits, mut ndcg) = (0.0, 0.0);
    for &r in ranks {
        if r <= k {
            hits += 1.0;
            ndcg += 1.0 / (r + 1.0).log2();
        }
    }
    let n = ranks.len() as f64;
    (hits / n, ndcg / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub repeats: usize,
    pub ks: Vec<usize>,
    pub topk_negatives: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            repeats: 5,
            ks: vec![5, 10],
            topk_negatives: 100,
            threshold: 0.5,
            seed: 0,
        }
    }
}

/// Mean and sample standard deviation of one metric over repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub name: String,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn std(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub metrics: Vec<MetricSummary>,
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }

    fn push(&mut self, name: String, value: f64) {
        match self.metrics.iter_mut().find(|m| m.name == name) {
            Some(m) => m.values.push(value),
            None => self.metrics.push(MetricSummary {
                name,
                values: vec![value],
            }),
        }
    }

    /// Appends another report's repeats metric by metric.
    pub fn merge(&mut self, other: &EvalReport) {
        for m in &other.metrics {
            for &v in &m.values {
                self.push(m.name.clone(), v);
            }
        }
    }

    /// `metric<TAB>mean<TAB>std` lines.
    pub fn machine(&self) -> String {
        let mut s = String::new();
        for m in &self.metrics {
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}", m.name, m.mean(), m.std());
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<10} {:>8} {:>8}\n", "metric", "mean", "std");
        for m in &self.metrics {
            let _ = writeln!(s, "{:<10} {:>8.4} {:>8.4}", m.name, m.mean(), m.std());
        }
        s
    }
}

/// CTR metrics on test positives with one negative each and top-k metrics
/// ranking every test positive against sampled unseen items, repeated with
/// derived seeds for negatives and expansion trees.
pub fn evaluate(
    model: &RgRecModel,
    g: &AugmentedGraph,
    test: &InteractionSet,
    exclusion: &PositiveIndex,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for rep in 0..cfg.repeats {
        let rep_seed = seed::derive(cfg.seed, &[seed::tag("eval"), rep as u64]);
        let ctr = ctr_set(test, exclusion, rep_seed);
        let scores = model.score_pairs(g, ctr.records(), rep_seed)?;
        let labels: Vec<bool> = ctr.records().iter().map(|r| r.positive).collect();
        report.push("auc".into(), auc(&scores, &labels)?);
        report.push("f1".into(), f1(&scores, &labels, cfg.threshold));

        let positives: Vec<_> = test.positives().copied().collect();
        let ranks: Vec<f64> = positives
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let mut rng = seed::derived_rng(rep_seed, &[seed::tag("topk"), i as u64]);
                let cands = sample_topk_candidates(r.user, r.item, exclusion, cfg.topk_negatives, &mut rng);
                let u = model.user_vector(g, g.user_entity(r.user), rep_seed);
                let s = cands
                    .items
                    .iter()
                    .map(|&m| model.score(&u, g.item_entity(m)))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(rank_of(s[0], &s[1..]))
            })
            .collect::<Result<_>>()?;
        for &k in &cfg.ks {
            let (hits, ndcg) = rank_metrics(&ranks, k);
            report.push(format!("hits@{k}"), hits);
            report.push(format!("ndcg@{k}"), ndcg);
        }
    }
    Ok(report)
}
