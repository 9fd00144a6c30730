//! Independent reference implementations used by the integration and
//! acceptance tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rgrec::dataset::{InteractionSet, Vocab};
use rgrec::kg::{merge_interactions, AugmentedGraph, EntityId, GraphBuilder, ItemMap, PredicateId};
use rgrec::rules::Rule;
use rgrec::seed;

/// Random augmented graph with at most 50 entities: items and attribute
/// entities joined by up to three predicates, a few item-item links, and
/// users with random interactions.
pub fn random_graph(s: u64) -> AugmentedGraph {
    let mut rng = seed::rng(s);
    let n_items = rng.gen_range(3..=12);
    let n_attrs = rng.gen_range(2..=14);
    let n_users = rng.gen_range(2..=8);
    let n_preds = rng.gen_range(1..=3);
    let mut b = GraphBuilder::new();
    for i in 0..n_items {
        b.entity(&format!("i{i}"));
    }
    let n_edges = rng.gen_range(n_items..=3 * n_items);
    for _ in 0..n_edges {
        let i = rng.gen_range(0..n_items);
        let p = rng.gen_range(0..n_preds);
        if rng.gen_bool(0.15) {
            let j = rng.gen_range(0..n_items);
            b.add(&format!("i{i}"), &format!("link{p}"), &format!("i{j}"));
        } else {
            let a = rng.gen_range(0..n_attrs);
            b.add(&format!("i{i}"), &format!("p{p}"), &format!("a{a}"));
        }
    }
    let kg = b.build();
    let users: Vec<String> = (0..n_users).map(|u| format!("u{u}")).collect();
    let items: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
    let mut records = Vec::new();
    for u in 0..n_users as u32 {
        for i in 0..n_items as u32 {
            if rng.gen_bool(0.25) {
                records.push((u, i, true));
            }
        }
    }
    let data = InteractionSet::from_indices(Vocab::from_labels(users, items), &records);
    let g = merge_interactions(&kg, &data, &ItemMap::identity()).unwrap();
    assert!(g.graph().num_entities() <= 50);
    g
}

fn forbidden(g: &AugmentedGraph, u: EntityId, m: EntityId, x: EntityId, p: PredicateId, y: EntityId) -> bool {
    let i = g.interacts();
    (x == u && p == i && y == m) || (x == m && p == i.inverse() && y == u)
}

/// Every predicate sequence of length `2..=max_len` walked from `u` to `m`
/// without using the edge `(u, interacts, m)` in either direction and
/// without stepping straight back over the edge just used.
pub fn oracle_rules_between(g: &AugmentedGraph, u: EntityId, m: EntityId, max_len: usize) -> BTreeSet<Vec<PredicateId>> {
    #[allow(clippy::too_many_arguments)]
    fn dfs(
        g: &AugmentedGraph,
        u: EntityId,
        m: EntityId,
        max_len: usize,
        x: EntityId,
        prev: Option<EntityId>,
        path: &mut Vec<PredicateId>,
        out: &mut BTreeSet<Vec<PredicateId>>,
    ) {
        if path.len() >= 2 && x == m {
            out.insert(path.clone());
        }
        if path.len() == max_len {
            return;
        }
        let edges: Vec<_> = g.graph().edges(x).collect();
        for (p, y) in edges {
            if forbidden(g, u, m, x, p, y) {
                continue;
            }
            if path.last().map(|l| l.inverse()) == Some(p) && prev == Some(y) {
                continue;
            }
            path.push(p);
            dfs(g, u, m, max_len, y, Some(x), path, out);
            path.pop();
        }
    }
    let mut out = BTreeSet::new();
    dfs(g, u, m, max_len, u, None, &mut Vec::new(), &mut out);
    out
}

/// Union of [`oracle_rules_between`] over all interacting pairs.
pub fn oracle_mine(g: &AugmentedGraph, max_len: usize) -> BTreeSet<Vec<PredicateId>> {
    let mut out = BTreeSet::new();
    for u in g.user_entities() {
        for &m in g.neighbors(u, g.interacts()) {
            out.extend(oracle_rules_between(g, u, m, max_len));
        }
    }
    out
}

/// Whether some walk from `u` to `m` follows `rule` under the same
/// restrictions as [`oracle_rules_between`].
pub fn oracle_match(g: &AugmentedGraph, u: EntityId, m: EntityId, rule: &Rule) -> bool {
    fn walk(g: &AugmentedGraph, u: EntityId, m: EntityId, body: &[PredicateId], k: usize, x: EntityId, prev: Option<EntityId>) -> bool {
        if k == body.len() {
            return x == m;
        }
        let p = body[k];
        g.neighbors(x, p).iter().any(|&y| {
            !forbidden(g, u, m, x, p, y)
                && !(k > 0 && body[k - 1].inverse() == p && prev == Some(y))
                && walk(g, u, m, body, k + 1, y, Some(x))
        })
    }
    walk(g, u, m, rule.body(), 0, u, None)
}

/// Fraction of positive-negative pairs ordered correctly, ties counting one
/// half, by direct enumeration.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

pub fn brute_f1(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let tp = predicted.iter().zip(labels).filter(|(p, l)| **p && **l).count() as f64;
    let pp = predicted.iter().filter(|p| **p).count() as f64;
    let ap = labels.iter().filter(|l| **l).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / pp;
    let recall = tp / ap;
    2.0 * precision * recall / (precision + recall)
}

/// Hits@k and NDCG@k from raw candidate scores, the positive listed first.
pub fn brute_topk(lists: &[Vec<f64>], k: usize) -> (f64, f64) {
    let mut hits = 0.0;
    let mut ndcg = 0.0;
    for scores in lists {
        let pos = scores[0];
        let mut rank = 1.0;
        for &s in &scores[1..] {
            if s > pos {
                rank += 1.0;
            } else if s == pos {
                rank += 0.5;
            }
        }
        if rank <= k as f64 {
            hits += 1.0;
            ndcg += 1.0 / (rank + 1.0).log2();
        }
    }
    (hits / lists.len() as f64, ndcg / lists.len() as f64)
}

/// Logistic regression without regularization fitted by plain full-batch
/// gradient descent on the log loss.
pub fn logistic_fit(rows: &[Vec<f64>], labels: &[f64], steps: usize, lr: f64) -> Vec<f64> {
    let mut w = vec![0.0; rows[0].len()];
    for _ in 0..steps {
        let mut g = vec![0.0; w.len()];
        for (x, &l) in rows.iter().zip(labels) {
            let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += (p - l) * xj / rows.len() as f64;
            }
        }
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= lr * gj;
        }
    }
    w
}
