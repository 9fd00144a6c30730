//! The rule-guided recommendation model: per-rule expansion trees with
//! blank-entity feedback, iterative aggregation, weighted combination of the
//! per-rule user vectors, and training with manual backpropagation.

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::binio::{self, BinReader, BinWriter};
use crate::dataset::Interaction;
use crate::error::{Error, Result};
use crate::eval;
use crate::kg::{AugmentedGraph, EntityId, PredicateId};
use crate::optim::Adam;
use crate::rules::{Rule, RuleEntry, RuleSet};
use crate::seed::{self, Rng};

/// Longest rule the aggregator supports (one parameter layer per iteration).
pub const MAX_DEPTH: usize = 4;

/// Fixed-fanout sample of the entities reached from a user along a rule.
///
/// Nodes are stored breadth first, so the children of node `n` are
/// `n*Y + 1 ..= n*Y + Y` and levels `0..=k` are a prefix of the node list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpansionTree {
    fanout: usize,
    height: usize,
    nodes: Vec<Option<EntityId>>,
}

fn count_upto(fanout: usize, level: usize) -> usize {
    (0..=level).map(|k| fanout.pow(k as u32)).sum()
}

impl ExpansionTree {
    pub fn fanout(&self) -> usize {
        self.fanout
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn nodes(&self) -> &[Option<EntityId>] {
        &self.nodes
    }

    /// Nodes in levels `0..=level`.
    pub fn count_upto(&self, level: usize) -> usize {
        count_upto(self.fanout, level)
    }

    pub fn level(&self, k: usize) -> &[Option<EntityId>] {
        let start = if k == 0 { 0 } else { self.count_upto(k - 1) };
        &self.nodes[start..self.count_upto(k)]
    }

    fn children(&self, n: usize) -> std::ops::Range<usize> {
        n * self.fanout + 1..n * self.fanout + 1 + self.fanout
    }
}

/// Expands `user` along `rule`, sampling `fanout` successors per node.
///
/// Successors are drawn without replacement when there are enough of them
/// and with replacement otherwise; a node without successors (or a blank
/// node) gets `fanout` blank children. `masked` drops that item from the
/// user's first hop when the rule starts with `interacts`.
pub fn expand(
    g: &AugmentedGraph,
    user: EntityId,
    rule: &Rule,
    fanout: usize,
    masked: Option<EntityId>,
    rng: &mut Rng,
) -> ExpansionTree {
    assert!(fanout > 0, "fanout must be positive");
    let h = rule.len();
    let total = count_upto(fanout, h);
    let mut nodes = Vec::with_capacity(total);
    nodes.push(Some(user));
    let mut scratch = Vec::new();
    for (k, &p) in rule.body().iter().enumerate() {
        let start = if k == 0 { 0 } else { count_upto(fanout, k - 1) };
        let end = count_upto(fanout, k);
        for n in start..end {
            let succ: &[EntityId] = match nodes[n] {
                Some(e) => {
                    let all = g.neighbors(e, p);
                    match masked {
                        Some(m) if k == 0 && p == g.interacts() => {
                            scratch.clear();
                            scratch.extend(all.iter().copied().filter(|&x| x != m));
                            &scratch
                        }
                        _ => all,
                    }
                }
                None => &[],
            };
            if succ.is_empty() {
                nodes.extend(std::iter::repeat_n(None, fanout));
            } else if succ.len() >= fanout {
                let picks = rand::seq::index::sample(rng, succ.len(), fanout);
                nodes.extend(picks.into_iter().map(|i| Some(succ[i])));
            } else {
                for _ in 0..fanout {
                    nodes.push(Some(succ[rng.gen_range(0..succ.len())]));
                }
            }
        }
    }
    debug_assert_eq!(nodes.len(), total);
    ExpansionTree {
        fanout,
        height: h,
        nodes,
    }
}

/// All trainable parameters in one flat vector:
/// `[entity rows + blank row | aggregator layers | rule weights]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dim: usize,
    num_entities: usize,
    depth: usize,
    num_rules: usize,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dim: usize, num_entities: usize, depth: usize, num_rules: usize) -> Self {
        assert!(dim > 0 && (1..=MAX_DEPTH).contains(&depth));
        let len = (num_entities + 1) * dim + depth * (2 * dim * dim + dim) + num_rules;
        ModelParams {
            dim,
            num_entities,
            depth,
            num_rules,
            values: vec![0.0; len],
        }
    }

    /// Entity rows and aggregator weights uniform in `±1/√dim`; rule weights
    /// from `w`, or uniform in the same range when absent.
    pub fn init(
        dim: usize,
        num_entities: usize,
        depth: usize,
        num_rules: usize,
        w: Option<&[f64]>,
        rng: &mut Rng,
    ) -> Self {
        let mut p = ModelParams::zeros(dim, num_entities, depth, num_rules);
        let r = 1.0 / (dim as f64).sqrt();
        let w_start = p.w_offset();
        for x in &mut p.values[..w_start] {
            *x = rng.gen_range(-r..r);
        }
        match w {
            Some(w) => p.values[w_start..].copy_from_slice(w),
            None => {
                for x in &mut p.values[w_start..] {
                    *x = rng.gen_range(-r..r);
                }
            }
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_rules(&self) -> usize {
        self.num_rules
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row of the shared blank entity.
    pub fn blank_row(&self) -> usize {
        self.num_entities
    }

    fn row_of(&self, node: Option<EntityId>) -> usize {
        node.map_or(self.num_entities, EntityId::index)
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.dim..(row + 1) * self.dim]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.values[row * d..(row + 1) * d]
    }

    fn layer_offset(&self, layer: usize) -> usize {
        (self.num_entities + 1) * self.dim + layer * (2 * self.dim * self.dim + self.dim)
    }

    /// `(W, b)` of aggregation iteration `layer + 1`; `W` is `dim × 2dim`
    /// row-major.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let o = self.layer_offset(layer);
        let d = self.dim;
        (&self.values[o..o + 2 * d * d], &self.values[o + 2 * d * d..o + 2 * d * d + d])
    }

    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let o = self.layer_offset(layer);
        let d = self.dim;
        let (w, b) = self.values[o..o + 2 * d * d + d].split_at_mut(2 * d * d);
        (w, b)
    }

    fn w_offset(&self) -> usize {
        self.layer_offset(self.depth)
    }

    pub fn rule_weights(&self) -> &[f64] {
        &self.values[self.w_offset()..]
    }

    pub fn rule_weights_mut(&mut self) -> &mut [f64] {
        let o = self.w_offset();
        &mut self.values[o..]
    }
}

/// Intermediate values of one rule's aggregation, kept for backpropagation.
struct Forward {
    /// `states[i]`: node states after iteration `i`, for levels `0..=h-i`.
    states: Vec<Vec<f64>>,
}

fn forward(params: &ModelParams, tree: &ExpansionTree) -> Forward {
    let d = params.dim;
    let h = tree.height;
    let y = tree.fanout as f64;
    let mut states = Vec::with_capacity(h + 1);
    let mut s0 = Vec::with_capacity(tree.nodes.len() * d);
    for &n in &tree.nodes {
        s0.extend_from_slice(params.row(params.row_of(n)));
    }
    states.push(s0);
    let mut x = vec![0.0; 2 * d];
    for i in 1..=h {
        let count = tree.count_upto(h - i);
        let prev = &states[i - 1];
        let (w, b) = params.layer(i - 1);
        let mut cur = vec![0.0; count * d];
        for n in 0..count {
            x[..d].copy_from_slice(&prev[n * d..(n + 1) * d]);
            x[d..].iter_mut().for_each(|v| *v = 0.0);
            for c in tree.children(n) {
                for (acc, v) in x[d..].iter_mut().zip(&prev[c * d..(c + 1) * d]) {
                    *acc += v;
                }
            }
            x[d..].iter_mut().for_each(|v| *v /= y);
            for r in 0..d {
                let a = b[r] + w[r * 2 * d..(r + 1) * 2 * d].iter().zip(&x).map(|(w, x)| w * x).sum::<f64>();
                cur[n * d + r] = if i == h { a.tanh() } else { a.max(0.0) };
            }
        }
        states.push(cur);
    }
    Forward { states }
}

/// Root state after all iterations: the user's vector for this rule.
pub fn aggregate_rule(params: &ModelParams, tree: &ExpansionTree) -> Vec<f64> {
    let f = forward(params, tree);
    f.states[tree.height][..params.dim].to_vec()
}

/// Gradient of one example: sparse entity rows plus the dense tail
/// (aggregator layers and rule weights).
struct ExampleGrad {
    rows: Vec<usize>,
    row_grads: Vec<f64>,
    tail: Vec<f64>,
}

fn backward(params: &ModelParams, tree: &ExpansionTree, f: &Forward, g_root: &[f64], out: &mut ExampleGrad) {
    let d = params.dim;
    let h = tree.height;
    let y = tree.fanout as f64;
    let tail0 = params.layer_offset(0);
    let mut g_cur = g_root.to_vec();
    let mut x = vec![0.0; 2 * d];
    let mut ga = vec![0.0; d];
    for i in (1..=h).rev() {
        let count = tree.count_upto(h - i);
        let prev = &f.states[i - 1];
        let cur = &f.states[i];
        let mut g_prev = vec![0.0; prev.len()];
        let (w, _) = params.layer(i - 1);
        let lo = params.layer_offset(i - 1) - tail0;
        for n in 0..count {
            let mut any = false;
            for r in 0..d {
                let s = cur[n * d + r];
                let deriv = if i == h {
                    1.0 - s * s
                } else if s > 0.0 {
                    1.0
                } else {
                    0.0
                };
                ga[r] = g_cur[n * d + r] * deriv;
                any |= ga[r] != 0.0;
            }
            if !any {
                continue;
            }
            x[..d].copy_from_slice(&prev[n * d..(n + 1) * d]);
            x[d..].iter_mut().for_each(|v| *v = 0.0);
            for c in tree.children(n) {
                for (acc, v) in x[d..].iter_mut().zip(&prev[c * d..(c + 1) * d]) {
                    *acc += v;
                }
            }
            x[d..].iter_mut().for_each(|v| *v /= y);
            let (gw, gb) = out.tail[lo..lo + 2 * d * d + d].split_at_mut(2 * d * d);
            for r in 0..d {
                if ga[r] == 0.0 {
                    continue;
                }
                for (g, xv) in gw[r * 2 * d..(r + 1) * 2 * d].iter_mut().zip(&x) {
                    *g += ga[r] * xv;
                }
                gb[r] += ga[r];
            }
            for col in 0..2 * d {
                let gx: f64 = (0..d).map(|r| w[r * 2 * d + col] * ga[r]).sum();
                if col < d {
                    g_prev[n * d + col] += gx;
                } else {
                    let gx = gx / y;
                    for c in tree.children(n) {
                        g_prev[c * d + col - d] += gx;
                    }
                }
            }
        }
        g_cur = g_prev;
    }
    for (n, &node) in tree.nodes.iter().enumerate() {
        let g = &g_cur[n * d..(n + 1) * d];
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        out.rows.push(params.row_of(node));
        out.row_grads.extend_from_slice(g);
    }
}

/// `u = Σ_j W_j · u_j` over the per-rule root vectors.
pub fn user_representation(params: &ModelParams, trees: &[ExpansionTree]) -> Vec<f64> {
    assert_eq!(trees.len(), params.num_rules, "one tree per rule");
    let mut u = vec![0.0; params.dim];
    for (tree, &w) in trees.iter().zip(params.rule_weights()) {
        for (acc, v) in u.iter_mut().zip(aggregate_rule(params, tree)) {
            *acc += w * v;
        }
    }
    u
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ(u · m)` with `m` the item's entity row.
pub fn predict(params: &ModelParams, u: &[f64], item: EntityId) -> Result<f64> {
    if item.index() >= params.num_entities {
        return Err(Error::UnknownLabel(format!("item entity {} has no embedding row", item.0)));
    }
    let m = params.row(item.index());
    Ok(sigmoid(u.iter().zip(m).map(|(a, b)| a * b).sum()))
}

fn l2(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One labeled example with its frozen expansion trees.
pub struct Example<'a> {
    pub item: EntityId,
    pub label: f64,
    pub trees: &'a [ExpansionTree],
}

/// `mean (l - σ(uᵀm))² + μ‖W‖₂`.
pub fn compute_loss(params: &ModelParams, batch: &[Example<'_>], mu: f64) -> f64 {
    let mse: f64 = batch
        .iter()
        .map(|ex| {
            let u = user_representation(params, ex.trees);
            let p = predict(params, &u, ex.item).expect("item row");
            (ex.label - p) * (ex.label - p)
        })
        .sum::<f64>()
        / batch.len() as f64;
    mse + mu * l2(params.rule_weights())
}

fn example_grad(params: &ModelParams, ex: &Example<'_>, scale: f64) -> (f64, ExampleGrad) {
    let d = params.dim;
    let fwds: Vec<Forward> = ex.trees.iter().map(|t| forward(params, t)).collect();
    let w = params.rule_weights();
    let mut u = vec![0.0; d];
    for (f, (&wj, t)) in fwds.iter().zip(w.iter().zip(ex.trees)) {
        for (acc, v) in u.iter_mut().zip(&f.states[t.height][..d]) {
            *acc += wj * v;
        }
    }
    let m = params.row(ex.item.index());
    let p = sigmoid(u.iter().zip(m).map(|(a, b)| a * b).sum());
    let err = ex.label - p;
    let gz = -2.0 * err * p * (1.0 - p) * scale;
    let tail0 = params.layer_offset(0);
    let mut out = ExampleGrad {
        rows: vec![ex.item.index()],
        row_grads: u.iter().map(|v| gz * v).collect(),
        tail: vec![0.0; params.values.len() - tail0],
    };
    let g_u: Vec<f64> = m.iter().map(|v| gz * v).collect();
    let w_lo = params.w_offset() - tail0;
    for (j, (f, t)) in fwds.iter().zip(ex.trees).enumerate() {
        let root = &f.states[t.height][..d];
        out.tail[w_lo + j] += root.iter().zip(&g_u).map(|(a, b)| a * b).sum::<f64>();
        if w[j] != 0.0 {
            let g_root: Vec<f64> = g_u.iter().map(|g| w[j] * g).collect();
            backward(params, t, f, &g_root, &mut out);
        }
    }
    (err * err, out)
}

/// Loss and dense gradient of [`compute_loss`], reduced in example order.
pub fn loss_and_gradient(params: &ModelParams, batch: &[Example<'_>], mu: f64) -> (f64, Vec<f64>) {
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, ExampleGrad)> = batch.par_iter().map(|ex| example_grad(params, ex, scale)).collect();
    let mut grad = vec![0.0; params.values.len()];
    let d = params.dim;
    let tail0 = params.layer_offset(0);
    let mut sq = 0.0;
    for (e, g) in &parts {
        sq += e;
        for (k, &row) in g.rows.iter().enumerate() {
            for (acc, v) in grad[row * d..(row + 1) * d].iter_mut().zip(&g.row_grads[k * d..(k + 1) * d]) {
                *acc += v;
            }
        }
        for (acc, v) in grad[tail0..].iter_mut().zip(&g.tail) {
            *acc += v;
        }
    }
    let w = params.rule_weights();
    let norm = l2(w);
    if norm > 0.0 {
        let o = params.w_offset();
        for (j, wj) in w.iter().enumerate() {
            grad[o + j] += mu * wj / norm;
        }
    }
    (sq * scale + mu * norm, grad)
}

/// Largest relative difference between the analytic gradient and central
/// finite differences, over every parameter with a non-negligible gradient.
pub fn gradient_check(params: &ModelParams, batch: &[Example<'_>], mu: f64, eps: f64) -> f64 {
    let (_, analytic) = loss_and_gradient(params, batch, mu);
    let mut p = params.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = p.values[i];
        p.values[i] = orig + eps;
        let up = compute_loss(&p, batch, mu);
        p.values[i] = orig - eps;
        let down = compute_loss(&p, batch, mu);
        p.values[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let scale = a.abs().max(numeric.abs());
        if scale < 1e-7 {
            continue;
        }
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub mu: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub fanout: usize,
    pub dim: usize,
    /// Hide an example's own `interacts` edge while expanding its user.
    pub mask_target: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.0005,
            batch_size: 64,
            mu: 1e-4,
            max_epochs: 50,
            patience: 3,
            seed: 0,
            fanout: 4,
            dim: 8,
            mask_target: false,
        }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate > 0.0
            && self.batch_size > 0
            && self.mu >= 0.0
            && self.max_epochs > 0
            && self.patience > 0
            && self.fanout > 0
            && self.dim > 0
        {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

/// Trained parameters together with what is needed to score new pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct RgRecModel {
    pub params: ModelParams,
    pub rules: RuleSet,
    pub fanout: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingReport {
    pub initial_loss: f64,
    /// Mean batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub valid_auc: Vec<f64>,
    pub best_epoch: usize,
    /// Training loss of the returned parameters on the epoch-0 trees.
    pub final_loss: f64,
}

impl RgRecModel {
    /// Samples one tree per rule for `user` from `rng`.
    pub fn trees(&self, g: &AugmentedGraph, user: EntityId, masked: Option<EntityId>, rng: &mut Rng) -> Vec<ExpansionTree> {
        self.rules
            .rules()
            .map(|r| expand(g, user, r, self.fanout, masked, rng))
            .collect()
    }

    /// Scoring-time user vector, from trees seeded by `tree_seed` and the
    /// user.
    pub fn user_vector(&self, g: &AugmentedGraph, user: EntityId, tree_seed: u64) -> Vec<f64> {
        let mut rng = seed::derived_rng(tree_seed, &[seed::tag("score"), u64::from(user.0)]);
        user_representation(&self.params, &self.trees(g, user, None, &mut rng))
    }

    pub fn score(&self, u: &[f64], item: EntityId) -> Result<f64> {
        predict(&self.params, u, item)
    }

    /// Scores of labeled pairs, computing each user vector once.
    pub fn score_pairs(&self, g: &AugmentedGraph, pairs: &[Interaction], tree_seed: u64) -> Result<Vec<f64>> {
        let mut users: Vec<u32> = pairs.iter().map(|r| r.user).collect();
        users.sort_unstable();
        users.dedup();
        let vectors: Vec<Vec<f64>> = users
            .par_iter()
            .map(|&u| self.user_vector(g, g.user_entity(u), tree_seed))
            .collect();
        pairs
            .iter()
            .map(|r| {
                let k = users.binary_search(&r.user).expect("user collected");
                self.score(&vectors[k], g.item_entity(r.item))
            })
            .collect()
    }

    const MAGIC: &'static [u8; 4] = b"RGRM";
    const VERSION: u32 = 1;

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BinWriter::new(Self::MAGIC, Self::VERSION);
        w.u64(self.seed);
        w.u32(self.fanout as u32);
        w.u32(self.params.dim as u32);
        w.u64(self.params.num_entities as u64);
        w.u32(self.params.depth as u32);
        w.u32(self.rules.len() as u32);
        for e in self.rules.entries() {
            w.u32(e.rule.len() as u32);
            for p in e.rule.body() {
                w.u32(p.0);
            }
        }
        w.f64s(&self.params.values);
        w.write_to(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = binio::read_file(path)?;
        let mut r = BinReader::open(&bytes, path, Self::MAGIC, Self::VERSION)?;
        let seed = r.u64()?;
        let fanout = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let num_entities = r.u64()? as usize;
        let depth = r.u32()? as usize;
        let n_rules = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n_rules);
        for _ in 0..n_rules {
            let len = r.u32()? as usize;
            if len == 0 || len > MAX_DEPTH {
                return Err(r.corrupt("rule length out of range"));
            }
            let body = (0..len).map(|_| r.u32().map(PredicateId)).collect::<Result<Vec<_>>>()?;
            entries.push(RuleEntry {
                rule: Rule::new(body),
                score: None,
            });
        }
        let values = r.f64s()?;
        r.finish()?;
        if dim == 0 || fanout == 0 || !(1..=MAX_DEPTH).contains(&depth) {
            return Err(Error::corrupt(path, "invalid model header"));
        }
        let params = ModelParams {
            dim,
            num_entities,
            depth,
            num_rules: n_rules,
            values,
        };
        if params.values.len() != ModelParams::zeros(dim, num_entities, depth, n_rules).values.len() {
            return Err(Error::corrupt(path, "parameter count disagrees with header"));
        }
        Ok(RgRecModel {
            params,
            rules: RuleSet::from_ranked(entries),
            fanout,
            seed,
        })
    }
}

fn check_rules(rules: &RuleSet) -> Result<usize> {
    if rules.is_empty() {
        return Err(Error::Config("the model needs at least one rule".into()));
    }
    let depth = rules.max_len();
    if depth > MAX_DEPTH {
        return Err(Error::Config(format!(
            "rules longer than {MAX_DEPTH} predicates are not supported by the aggregator"
        )));
    }
    Ok(depth)
}

/// Trees for every example of an epoch, seeded by epoch and example index.
fn epoch_trees(
    model: &RgRecModel,
    g: &AugmentedGraph,
    data: &[Interaction],
    epoch: u64,
    mask: bool,
) -> Vec<Vec<ExpansionTree>> {
    data.par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = seed::derived_rng(model.seed, &[seed::tag("train-trees"), epoch, i as u64]);
            let masked = (mask && r.positive).then(|| g.item_entity(r.item));
            model.trees(g, g.user_entity(r.user), masked, &mut rng)
        })
        .collect()
}

fn examples<'a>(g: &AugmentedGraph, data: &[Interaction], trees: &'a [Vec<ExpansionTree>]) -> Vec<Example<'a>> {
    data.iter()
        .zip(trees)
        .map(|(r, t)| Example {
            item: g.item_entity(r.item),
            label: r.label(),
            trees: t,
        })
        .collect()
}

fn validation_auc(model: &RgRecModel, g: &AugmentedGraph, valid: &[Interaction]) -> Result<f64> {
    let scores = model.score_pairs(g, valid, model.seed)?;
    let labels: Vec<bool> = valid.iter().map(|r| r.positive).collect();
    eval::auc(&scores, &labels)
}

/// Mini-batch Adam over labeled training pairs, fine-tuning the rule
/// weights together with the entity table and aggregator. Stops when the
/// validation AUC has not improved for `patience` epochs and returns the
/// best-validation parameters.
pub fn train(
    g: &AugmentedGraph,
    rules: &RuleSet,
    w_init: Option<&[f64]>,
    train: &[Interaction],
    valid: &[Interaction],
    cfg: &TrainingConfig,
) -> Result<(RgRecModel, TrainingReport)> {
    cfg.validate()?;
    let depth = check_rules(rules)?;
    if train.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    if let Some(w) = w_init {
        if w.len() != rules.len() {
            return Err(Error::Config(format!(
                "{} initial rule weights for {} rules",
                w.len(),
                rules.len()
            )));
        }
    }
    let ne = g.graph().num_entities();
    let mut rng = seed::derived_rng(cfg.seed, &[seed::tag("model-init")]);
    let params = ModelParams::init(cfg.dim, ne, depth, rules.len(), w_init, &mut rng);
    let mut model = RgRecModel {
        params,
        rules: rules.clone(),
        fanout: cfg.fanout,
        seed: cfg.seed,
    };
    let has_valid = valid.iter().any(|r| r.positive) && valid.iter().any(|r| !r.positive);

    let trees0 = epoch_trees(&model, g, train, 0, cfg.mask_target);
    let mut report = TrainingReport {
        initial_loss: compute_loss(&model.params, &examples(g, train, &trees0), cfg.mu),
        ..Default::default()
    };
    let mut adam = Adam::new(model.params.values.len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = seed::derived_rng(cfg.seed, &[seed::tag("train-order")]);
    let mut best: Option<(f64, ModelParams)> = None;
    let mut since_best = 0;
    info!(
        "training on {} examples with {} rules, dim {}, fanout {}",
        train.len(),
        rules.len(),
        cfg.dim,
        cfg.fanout
    );
    for epoch in 0..cfg.max_epochs {
        let trees = if epoch == 0 {
            trees0.clone()
        } else {
            epoch_trees(&model, g, train, epoch as u64, cfg.mask_target)
        };
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example<'_>> = chunk
                .iter()
                .map(|&i| Example {
                    item: g.item_entity(train[i].item),
                    label: train[i].label(),
                    trees: &trees[i],
                })
                .collect();
            let (loss, grad) = loss_and_gradient(&model.params, &batch, cfg.mu);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training loss became {loss} in epoch {epoch} (learning rate {}, batch {})",
                    cfg.learning_rate, cfg.batch_size
                )));
            }
            adam.step(&mut model.params.values, &grad);
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        report.epoch_losses.push(mean);
        if !has_valid {
            debug!("epoch {epoch}: loss {mean:.6}");
            best = Some((f64::NAN, model.params.clone()));
            report.best_epoch = epoch;
            continue;
        }
        let auc = validation_auc(&model, g, valid)?;
        report.valid_auc.push(auc);
        info!("epoch {epoch}: loss {mean:.6}, validation AUC {auc:.4}");
        if best.as_ref().is_none_or(|(b, _)| auc > *b) {
            best = Some((auc, model.params.clone()));
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, p)) = best {
        model.params = p;
    }
    report.final_loss = compute_loss(&model.params, &examples(g, train, &trees0), cfg.mu);
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{InteractionSet, Vocab};
    use crate::kg::{merge_interactions, GraphBuilder, ItemMap};

    fn graph() -> AugmentedGraph {
        let mut b = GraphBuilder::new();
        for (m, gnr) in [("m0", "rock"), ("m1", "rock"), ("m2", "pop"), ("m3", "pop"), ("m4", "jazz")] {
            b.add(m, "genre", gnr);
        }
        b.add("m0", "artist", "a0");
        b.add("m1", "artist", "a0");
        let vocab = Vocab::from_labels(["u0", "u1"], ["m0", "m1", "m2", "m3", "m4"]);
        let data = InteractionSet::from_indices(vocab, &[(0, 0, true), (1, 2, true), (1, 3, true)]);
        merge_interactions(&b.build(), &data, &ItemMap::identity()).unwrap()
    }

    fn rule(g: &AugmentedGraph, names: &[&str]) -> Rule {
        Rule::new(names.iter().map(|n| g.graph().predicate_id(n).unwrap()).collect())
    }

    #[test]
    fn tree_sizes() {
        let g = graph();
        let mut rng = seed::rng(0);
        let r3 = rule(&g, &["interacts", "genre", "genre__inv"]);
        let t = expand(&g, g.user_entity(0), &r3, 4, None, &mut rng);
        assert_eq!(t.nodes().len(), 85);
        let r2 = rule(&g, &["interacts", "genre"]);
        let t = expand(&g, g.user_entity(0), &r2, 4, None, &mut rng);
        assert_eq!(t.nodes().len(), 21);
        assert_eq!(t.level(0), &[Some(g.user_entity(0))]);
        assert!(t.level(1).iter().all(|n| *n == g.graph().entity_id("m0")));
    }

    #[test]
    fn dead_ends_expand_to_blanks() {
        let g = graph();
        let mut rng = seed::rng(0);
        let r = rule(&g, &["interacts", "artist", "artist__inv"]);
        let t = expand(&g, g.user_entity(1), &r, 4, None, &mut rng);
        assert!(t.level(1).iter().all(Option::is_some));
        assert!(t.level(2).iter().all(Option::is_none));
        assert!(t.level(3).iter().all(Option::is_none));
    }

    #[test]
    fn masking_hides_target() {
        let g = graph();
        let mut rng = seed::rng(0);
        let r = rule(&g, &["interacts", "genre"]);
        let m0 = g.graph().entity_id("m0");
        let t = expand(&g, g.user_entity(0), &r, 2, m0, &mut rng);
        assert!(t.level(1).iter().all(Option::is_none));
    }

    #[test]
    fn hand_computed_single_step() {
        let g = graph();
        let u = g.user_entity(0);
        let m0 = g.graph().entity_id("m0").unwrap();
        let mut p = ModelParams::zeros(2, g.graph().num_entities(), 1, 1);
        p.row_mut(u.index()).copy_from_slice(&[0.5, -1.0]);
        p.row_mut(m0.index()).copy_from_slice(&[2.0, 0.25]);
        {
            let (w, b) = p.layer_mut(0);
            w.copy_from_slice(&[0.1, 0.2, 0.3, 0.4, -0.5, 0.6, -0.7, 0.8]);
            b.copy_from_slice(&[0.05, -0.05]);
        }
        let mut rng = seed::rng(0);
        let t = expand(&g, u, &rule(&g, &["interacts"]), 1, None, &mut rng);
        let out = aggregate_rule(&p, &t);
        let x = [0.5, -1.0, 2.0, 0.25];
        let e0 = (0.1 * x[0] + 0.2 * x[1] + 0.3 * x[2] + 0.4 * x[3] + 0.05_f64).tanh();
        let e1 = (-0.5 * x[0] + 0.6 * x[1] - 0.7 * x[2] + 0.8 * x[3] - 0.05_f64).tanh();
        assert!((out[0] - e0).abs() < 1e-15 && (out[1] - e1).abs() < 1e-15);
    }

    #[test]
    fn zero_parameters_give_zero_vector() {
        let g = graph();
        let p = ModelParams::zeros(8, g.graph().num_entities(), 3, 1);
        let mut rng = seed::rng(0);
        let t = expand(&g, g.user_entity(0), &rule(&g, &["interacts", "genre", "genre__inv"]), 4, None, &mut rng);
        assert_eq!(aggregate_rule(&p, &t), vec![0.0; 8]);
    }

    #[test]
    fn prediction_values() {
        let mut p = ModelParams::zeros(2, 3, 1, 1);
        p.row_mut(1).copy_from_slice(&[1.0, 0.0]);
        assert_eq!(predict(&p, &[0.0, 5.0], EntityId(1)).unwrap(), 0.5);
        assert!((predict(&p, &[1.0, 5.0], EntityId(1)).unwrap() - 0.7310586).abs() < 1e-7);
        assert!(predict(&p, &[1.0, 0.0], EntityId(3)).is_err());
    }

    #[test]
    fn loss_values() {
        let mut p = ModelParams::zeros(2, 3, 1, 2);
        let trees = vec![
            ExpansionTree {
                fanout: 1,
                height: 1,
                nodes: vec![Some(EntityId(0)), Some(EntityId(2))],
            };
            2
        ];
        let batch = [Example {
            item: EntityId(1),
            label: 1.0,
            trees: &trees,
        }];
        assert_eq!(compute_loss(&p, &batch, 0.0), 0.25);
        p.rule_weights_mut().copy_from_slice(&[3.0, 4.0]);
        let half = [Example {
            item: EntityId(1),
            label: 0.5,
            trees: &trees,
        }];
        assert_eq!(compute_loss(&p, &half, 1.0), 5.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = graph();
        let rules = RuleSet::from_rules([rule(&g, &["interacts", "genre", "genre__inv"]), rule(&g, &["interacts"])]);
        let mut rng = seed::rng(5);
        let model = RgRecModel {
            params: ModelParams::init(4, g.graph().num_entities(), 3, 2, None, &mut rng),
            rules,
            fanout: 3,
            seed: 99,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        model.save(&path).unwrap();
        assert_eq!(RgRecModel::load(&path).unwrap(), model);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(RgRecModel::load(&path), Err(Error::Corrupt { .. })));
    }
}
