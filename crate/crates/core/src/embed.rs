//! RotatE and TransE embeddings of the augmented graph, used to score rules
//! by how well the composed body predicates reproduce `interacts`.
//!
//! RotatE predicates are stored as phase angles, so every predicate
//! coordinate `e^{iθ}` has modulus one by construction. Inverse predicates are
//! tied to their base predicate (negated phase, negated translation), which is
//! why training only visits base triples.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use rand::Rng as _;
use rayon::prelude::*;

use crate::binio::{self, BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, PredicateId, Triple};
use crate::optim::Adam;
use crate::rules::{Rule, RuleScore, Strategy};
use crate::seed::{self, Rng};

/// Dimensions handled by one training chunk; fixed so that results do not
/// depend on the thread count.
const CHUNK_DIMS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgeKind {
    RotatE,
    TransE,
}

impl KgeKind {
    fn width(self) -> usize {
        match self {
            KgeKind::RotatE => 2,
            KgeKind::TransE => 1,
        }
    }

    pub fn strategy(self) -> Strategy {
        match self {
            KgeKind::RotatE => Strategy::RotatE,
            KgeKind::TransE => Strategy::TransE,
        }
    }

    fn code(self) -> u8 {
        match self {
            KgeKind::RotatE => 1,
            KgeKind::TransE => 2,
        }
    }
}

impl fmt::Display for KgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KgeKind::RotatE => "rotate",
            KgeKind::TransE => "transe",
        })
    }
}

impl FromStr for KgeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rotate" => Ok(KgeKind::RotatE),
            "transe" => Ok(KgeKind::TransE),
            other => Err(Error::Config(format!("unknown embedding model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgeConfig {
    pub kind: KgeKind,
    /// Predicate embedding dimension (complex dimension for RotatE).
    pub dim: usize,
    pub negatives: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Self-adversarial sampling temperature; 0 weights negatives uniformly.
    pub adversarial_temperature: f64,
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            kind: KgeKind::RotatE,
            dim: 1024,
            negatives: 25,
            margin: 6.0,
            learning_rate: 1e-4,
            steps: 100_000,
            batch_size: 512,
            adversarial_temperature: 1.0,
            seed: 0,
        }
    }
}

impl KgeConfig {
    fn validate(&self) -> Result<()> {
        let positive = self.dim > 0
            && self.negatives > 0
            && self.margin > 0.0
            && self.learning_rate > 0.0
            && self.steps > 0
            && self.batch_size > 0
            && self.adversarial_temperature >= 0.0;
        if positive {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid embedding configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    kind: KgeKind,
    dim: usize,
    num_entities: usize,
    num_predicates: usize,
    /// Row-major; a RotatE row is `dim` real parts followed by `dim`
    /// imaginary parts.
    entities: Vec<f64>,
    /// One row of `dim` values per base predicate: phases for RotatE,
    /// translations for TransE.
    predicates: Vec<f64>,
}

/// A predicate or composed rule body in predicate space.
#[derive(Debug, Clone, PartialEq)]
pub enum Composition {
    /// Unit-modulus complex vector given by its phases, each in `(-π, π]`.
    Phases(Vec<f64>),
    Translation(Vec<f64>),
}

fn wrap_phase(mut x: f64) -> f64 {
    while x > PI {
        x -= 2.0 * PI;
    }
    while x <= -PI {
        x += 2.0 * PI;
    }
    x
}

impl Composition {
    pub fn values(&self) -> &[f64] {
        match self {
            Composition::Phases(v) | Composition::Translation(v) => v,
        }
    }

    /// Combines with another element: phases add, translations sum.
    pub fn then(&self, other: &Composition) -> Composition {
        match (self, other) {
            (Composition::Phases(a), Composition::Phases(b)) => {
                Composition::Phases(a.iter().zip(b).map(|(x, y)| wrap_phase(x + y)).collect())
            }
            (Composition::Translation(a), Composition::Translation(b)) => {
                Composition::Translation(a.iter().zip(b).map(|(x, y)| x + y).collect())
            }
            _ => panic!("cannot compose rotations with translations"),
        }
    }

    /// Euclidean distance; for rotations, the complex L2 norm of the
    /// difference of the unit vectors.
    pub fn distance(&self, other: &Composition) -> f64 {
        match (self, other) {
            (Composition::Phases(a), Composition::Phases(b)) => a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let dr = x.cos() - y.cos();
                    let di = x.sin() - y.sin();
                    dr * dr + di * di
                })
                .sum::<f64>()
                .sqrt(),
            (Composition::Translation(a), Composition::Translation(b)) => {
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            }
            _ => panic!("cannot compare rotations with translations"),
        }
    }
}

impl EmbeddingModel {
    /// Randomly initialized model: entities uniform in `±(γ+2)/dim`, RotatE
    /// phases uniform in `[-π, π)`.
    pub fn init(cfg: &KgeConfig, num_entities: usize, num_predicates: usize, rng: &mut Rng) -> Self {
        let range = (cfg.margin + 2.0) / cfg.dim as f64;
        let w = cfg.kind.width();
        let entities = (0..num_entities * w * cfg.dim)
            .map(|_| rng.gen_range(-range..range))
            .collect();
        let predicates = (0..num_predicates * cfg.dim)
            .map(|_| match cfg.kind {
                KgeKind::RotatE => rng.gen_range(-PI..PI),
                KgeKind::TransE => rng.gen_range(-range..range),
            })
            .collect();
        EmbeddingModel {
            kind: cfg.kind,
            dim: cfg.dim,
            num_entities,
            num_predicates,
            entities,
            predicates,
        }
    }

    pub fn from_parts(kind: KgeKind, dim: usize, entities: Vec<f64>, predicates: Vec<f64>) -> Result<Self> {
        let w = kind.width();
        if dim == 0 || !entities.len().is_multiple_of(w * dim) || !predicates.len().is_multiple_of(dim) {
            return Err(Error::Data("embedding tables do not match the dimension".into()));
        }
        Ok(EmbeddingModel {
            kind,
            dim,
            num_entities: entities.len() / (w * dim),
            num_predicates: predicates.len() / dim,
            entities,
            predicates,
        })
    }

    pub fn kind(&self) -> KgeKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_base_predicates(&self) -> usize {
        self.num_predicates
    }

    pub fn entity_table(&self) -> &[f64] {
        &self.entities
    }

    pub fn predicate_table(&self) -> &[f64] {
        &self.predicates
    }

    fn entity_row(&self, e: EntityId) -> &[f64] {
        let w = self.kind.width() * self.dim;
        &self.entities[e.index() * w..(e.index() + 1) * w]
    }

    fn base_row(&self, p: PredicateId) -> &[f64] {
        let b = p.base() as usize;
        &self.predicates[b * self.dim..(b + 1) * self.dim]
    }

    /// Embedding of a predicate; inverses are the conjugate rotation or the
    /// negated translation of their base predicate.
    pub fn predicate(&self, p: PredicateId) -> Composition {
        let sign = if p.is_inverse() { -1.0 } else { 1.0 };
        let v: Vec<f64> = self.base_row(p).iter().map(|x| sign * x).collect();
        match self.kind {
            KgeKind::RotatE => Composition::Phases(v.into_iter().map(wrap_phase).collect()),
            KgeKind::TransE => Composition::Translation(v),
        }
    }

    /// Modulus of every RotatE predicate coordinate, inverses included.
    pub fn predicate_moduli(&self) -> Vec<f64> {
        self.predicates
            .iter()
            .flat_map(|&t| [t, -t])
            .map(|t| (t.cos() * t.cos() + t.sin() * t.sin()).sqrt())
            .collect()
    }

    /// `p1 ∘ p2 ∘ ... ∘ ph` for the rule body.
    pub fn compose(&self, rule: &Rule) -> Composition {
        let mut it = rule.body().iter();
        let first = self.predicate(*it.next().expect("non-empty rule"));
        it.fold(first, |acc, &p| acc.then(&self.predicate(p)))
    }

    /// Rule confidence `-‖p_head - compose(body)‖₂`.
    pub fn composition_confidence(&self, head: PredicateId, rule: &Rule) -> RuleScore {
        let value = -self.predicate(head).distance(&self.compose(rule));
        RuleScore {
            strategy: self.kind.strategy(),
            value,
            estimated: false,
        }
    }

    /// Distance of a triple under the model (smaller is more plausible).
    pub fn distance(&self, t: Triple) -> f64 {
        let s = self.entity_row(t.s);
        let o = self.entity_row(t.o);
        let p = self.base_row(t.p);
        let sign = if t.p.is_inverse() { -1.0 } else { 1.0 };
        match self.kind {
            KgeKind::RotatE => rotate_distance(s, p, o, self.dim, sign),
            KgeKind::TransE => transe_distance(s, p, o, sign),
        }
    }

    const MAGIC: &'static [u8; 4] = b"RGKE";
    const VERSION: u32 = 1;

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BinWriter::new(Self::MAGIC, Self::VERSION);
        w.u8(self.kind.code());
        w.u32(self.dim as u32);
        w.u64(self.num_entities as u64);
        w.u64(self.num_predicates as u64);
        w.f64s(&self.entities);
        w.f64s(&self.predicates);
        w.write_to(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = binio::read_file(path)?;
        let mut r = BinReader::open(&bytes, path, Self::MAGIC, Self::VERSION)?;
        let kind = match r.u8()? {
            1 => KgeKind::RotatE,
            2 => KgeKind::TransE,
            _ => return Err(r.corrupt("unknown model kind")),
        };
        let dim = r.u32()? as usize;
        let num_entities = r.u64()? as usize;
        let num_predicates = r.u64()? as usize;
        let entities = r.f64s()?;
        let predicates = r.f64s()?;
        r.finish()?;
        if entities.len() != num_entities * kind.width() * dim || predicates.len() != num_predicates * dim {
            return Err(Error::corrupt(path, "table sizes disagree with header"));
        }
        Ok(EmbeddingModel {
            kind,
            dim,
            num_entities,
            num_predicates,
            entities,
            predicates,
        })
    }
}

/// `Σ_k |s_k e^{±iθ_k} - o_k|` over the `width` coordinates of `s` and `o`
/// (real block then imaginary block).
fn rotate_distance(s: &[f64], theta: &[f64], o: &[f64], width: usize, sign: f64) -> f64 {
    let (sin, cos): (Vec<f64>, Vec<f64>) = theta.iter().map(|t| (sign * t).sin_cos()).unzip();
    rotate_distance_trig(s, &cos, &sin, o, width)
}

/// [`rotate_distance`] with the rotation given by its cosines and sines.
fn rotate_distance_trig(s: &[f64], cos: &[f64], sin: &[f64], o: &[f64], width: usize) -> f64 {
    let (sr, si) = s.split_at(width);
    let (or, oi) = o.split_at(width);
    let mut d = 0.0;
    for k in 0..width {
        let (sn, c) = (sin[k], cos[k]);
        let zr = sr[k] * c - si[k] * sn - or[k];
        let zi = sr[k] * sn + si[k] * c - oi[k];
        d += (zr * zr + zi * zi).sqrt();
    }
    d
}

fn transe_distance(s: &[f64], p: &[f64], o: &[f64], sign: f64) -> f64 {
    s.iter()
        .zip(p)
        .zip(o)
        .map(|((s, p), o)| (s + sign * p - o).abs())
        .sum()
}

/// Accumulates `coeff * ∂d/∂(s, θ, o)` for a base-predicate RotatE triple
/// whose phases θ have the given cosines and sines.
#[allow(clippy::too_many_arguments)]
fn rotate_grad(
    s: &[f64],
    cos: &[f64],
    sin: &[f64],
    o: &[f64],
    width: usize,
    coeff: f64,
    gs: &mut [f64],
    gtheta: &mut [f64],
    go: &mut [f64],
) {
    for k in 0..width {
        let (sn, c) = (sin[k], cos[k]);
        let (sr, si) = (s[k], s[width + k]);
        let zr = sr * c - si * sn - o[k];
        let zi = sr * sn + si * c - o[width + k];
        let norm = (zr * zr + zi * zi).sqrt();
        if norm == 0.0 {
            continue;
        }
        let ar = coeff * zr / norm;
        let ai = coeff * zi / norm;
        gs[k] += ar * c + ai * sn;
        gs[width + k] += -ar * sn + ai * c;
        go[k] -= ar;
        go[width + k] -= ai;
        gtheta[k] += ar * (-sr * sn - si * c) + ai * (sr * c - si * sn);
    }
}

fn transe_grad(s: &[f64], p: &[f64], o: &[f64], coeff: f64, gs: &mut [f64], gp: &mut [f64], go: &mut [f64]) {
    for k in 0..s.len() {
        let z = s[k] + p[k] - o[k];
        let g = if z > 0.0 {
            coeff
        } else if z < 0.0 {
            -coeff
        } else {
            0.0
        };
        gs[k] += g;
        gp[k] += g;
        go[k] -= g;
    }
}

/// One training batch: positives and, per positive, `K` corrupted entities
/// replacing the head (`corrupt_head`) or the tail.
#[derive(Debug, Clone)]
pub struct KgeBatch {
    pub positives: Vec<Triple>,
    pub corrupt_head: Vec<bool>,
    /// `positives.len() * K` entities, grouped per positive.
    pub negatives: Vec<EntityId>,
}

impl KgeBatch {
    pub fn negatives_per_positive(&self) -> usize {
        if self.positives.is_empty() {
            0
        } else {
            self.negatives.len() / self.positives.len()
        }
    }

    /// Triple at slot `j` of positive `b`: slot 0 is the positive itself.
    fn triple(&self, b: usize, j: usize) -> Triple {
        let t = self.positives[b];
        if j == 0 {
            return t;
        }
        let k = self.negatives_per_positive();
        let e = self.negatives[b * k + j - 1];
        if self.corrupt_head[b] {
            Triple { s: e, ..t }
        } else {
            Triple { o: e, ..t }
        }
    }

    pub fn sample(triples: &[Triple], num_entities: usize, size: usize, negatives: usize, rng: &mut Rng) -> Self {
        let mut positives = Vec::with_capacity(size);
        let mut corrupt_head = Vec::with_capacity(size);
        let mut negs = Vec::with_capacity(size * negatives);
        for _ in 0..size {
            positives.push(triples[rng.gen_range(0..triples.len())]);
            corrupt_head.push(rng.gen_bool(0.5));
            for _ in 0..negatives {
                negs.push(EntityId(rng.gen_range(0..num_entities as u32)));
            }
        }
        KgeBatch {
            positives,
            corrupt_head,
            negatives: negs,
        }
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Self-adversarial negative-sampling loss and `∂loss/∂distance` for every
/// slot, given all slot distances (`B * (K + 1)`, positive first).
///
/// `loss = ½ mean_b[-log σ(γ - d⁺)] + ½ mean_b[Σ_k w_k · -log σ(d_k - γ)]`
/// with `w = softmax(-α d)` over the negatives of a positive, held constant
/// during differentiation.
fn loss_and_coefficients(dist: &[f64], k: usize, margin: f64, temperature: f64) -> (f64, Vec<f64>) {
    let slots = k + 1;
    let b = dist.len() / slots;
    let scale = 0.5 / b as f64;
    let mut coef = vec![0.0; dist.len()];
    let mut loss = 0.0;
    let mut weights = vec![0.0; k];
    for i in 0..b {
        let row = &dist[i * slots..(i + 1) * slots];
        loss -= scale * log_sigmoid(margin - row[0]);
        coef[i * slots] = scale * sigmoid(row[0] - margin);

        let logits: Vec<f64> = row[1..].iter().map(|d| -temperature * d).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (w, l) in weights.iter_mut().zip(&logits) {
            *w = (l - max).exp();
            z += *w;
        }
        for j in 0..k {
            let w = weights[j] / z;
            let d = row[1 + j];
            loss -= scale * w * log_sigmoid(d - margin);
            coef[i * slots + 1 + j] = -scale * w * sigmoid(margin - d);
        }
    }
    (loss, coef)
}

/// Slice of the embedding dimensions with its own parameters, gradients and
/// optimizer state.
struct Chunk {
    kind: KgeKind,
    width: usize,
    ent: Vec<f64>,
    pred: Vec<f64>,
    ent_grad: Vec<f64>,
    pred_grad: Vec<f64>,
    ent_touched: Vec<u32>,
    ent_mark: Vec<bool>,
    pred_touched: Vec<u32>,
    pred_mark: Vec<bool>,
    ent_opt: Adam,
    pred_opt: Adam,
    /// Cosines and sines of `pred`, kept in step with it for RotatE.
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Chunk {
    fn row_len(&self) -> usize {
        self.kind.width() * self.width
    }

    fn refresh_trig(&mut self) {
        if self.kind == KgeKind::RotatE {
            (self.sin, self.cos) = self.pred.iter().map(|t| t.sin_cos()).unzip();
        }
    }

    fn partial_distances(&self, batch: &KgeBatch, out: &mut [f64]) {
        let slots = batch.negatives_per_positive() + 1;
        let rl = self.row_len();
        let w = self.width;
        for b in 0..batch.positives.len() {
            for j in 0..slots {
                let t = batch.triple(b, j);
                let s = &self.ent[t.s.index() * rl..][..rl];
                let o = &self.ent[t.o.index() * rl..][..rl];
                let r = t.p.base() as usize * w..(t.p.base() as usize + 1) * w;
                out[b * slots + j] = match self.kind {
                    KgeKind::RotatE => rotate_distance_trig(s, &self.cos[r.clone()], &self.sin[r], o, w),
                    KgeKind::TransE => transe_distance(s, &self.pred[r], o, 1.0),
                };
            }
        }
    }

    fn touch_entity(&mut self, e: EntityId) {
        if !self.ent_mark[e.index()] {
            self.ent_mark[e.index()] = true;
            self.ent_touched.push(e.0);
        }
    }

    fn touch_predicate(&mut self, p: u32) {
        if !self.pred_mark[p as usize] {
            self.pred_mark[p as usize] = true;
            self.pred_touched.push(p);
        }
    }

    fn accumulate(&mut self, batch: &KgeBatch, coef: &[f64]) {
        let slots = batch.negatives_per_positive() + 1;
        let rl = self.row_len();
        let w = self.width;
        let mut gs = vec![0.0; rl];
        let mut go = vec![0.0; rl];
        let mut gp = vec![0.0; w];
        for b in 0..batch.positives.len() {
            for j in 0..slots {
                let t = batch.triple(b, j);
                let c = coef[b * slots + j];
                gs.iter_mut().for_each(|x| *x = 0.0);
                go.iter_mut().for_each(|x| *x = 0.0);
                gp.iter_mut().for_each(|x| *x = 0.0);
                {
                    let s = &self.ent[t.s.index() * rl..][..rl];
                    let o = &self.ent[t.o.index() * rl..][..rl];
                    let r = t.p.base() as usize * w..(t.p.base() as usize + 1) * w;
                    match self.kind {
                        KgeKind::RotatE => {
                            rotate_grad(s, &self.cos[r.clone()], &self.sin[r], o, w, c, &mut gs, &mut gp, &mut go)
                        }
                        KgeKind::TransE => transe_grad(s, &self.pred[r], o, c, &mut gs, &mut gp, &mut go),
                    }
                }
                self.touch_entity(t.s);
                self.touch_entity(t.o);
                self.touch_predicate(t.p.base());
                for (dst, g) in self.ent_grad[t.s.index() * rl..][..rl].iter_mut().zip(&gs) {
                    *dst += g;
                }
                for (dst, g) in self.ent_grad[t.o.index() * rl..][..rl].iter_mut().zip(&go) {
                    *dst += g;
                }
                for (dst, g) in self.pred_grad[t.p.base() as usize * w..][..w].iter_mut().zip(&gp) {
                    *dst += g;
                }
            }
        }
    }

    fn apply(&mut self) {
        let rl = self.row_len();
        let w = self.width;
        self.ent_opt.tick();
        self.pred_opt.tick();
        let mut touched = std::mem::take(&mut self.ent_touched);
        touched.sort_unstable();
        for &e in &touched {
            let r = e as usize * rl..(e as usize + 1) * rl;
            self.ent_opt.update_at(r.start, &mut self.ent[r.clone()], &self.ent_grad[r.clone()]);
            self.ent_grad[r].iter_mut().for_each(|g| *g = 0.0);
            self.ent_mark[e as usize] = false;
        }
        touched.clear();
        self.ent_touched = touched;
        let mut touched = std::mem::take(&mut self.pred_touched);
        touched.sort_unstable();
        for &p in &touched {
            let r = p as usize * w..(p as usize + 1) * w;
            self.pred_opt.update_at(r.start, &mut self.pred[r.clone()], &self.pred_grad[r.clone()]);
            self.pred_grad[r].iter_mut().for_each(|g| *g = 0.0);
            self.pred_mark[p as usize] = false;
        }
        touched.clear();
        self.pred_touched = touched;
        self.refresh_trig();
    }
}

fn split_chunks(model: &EmbeddingModel, chunk_dims: usize, lr: f64) -> Vec<Chunk> {
    let d = model.dim;
    let ne = model.num_entities;
    let np = model.num_predicates;
    let mut chunks = Vec::new();
    let mut lo = 0;
    while lo < d {
        let width = chunk_dims.min(d - lo);
        let mut ent = Vec::with_capacity(ne * model.kind.width() * width);
        for e in 0..ne {
            let row = model.entity_row(EntityId(e as u32));
            ent.extend_from_slice(&row[lo..lo + width]);
            if model.kind == KgeKind::RotatE {
                ent.extend_from_slice(&row[d + lo..d + lo + width]);
            }
        }
        let mut pred = Vec::with_capacity(np * width);
        for p in 0..np {
            pred.extend_from_slice(&model.predicates[p * d + lo..p * d + lo + width]);
        }
        chunks.push(Chunk {
            kind: model.kind,
            width,
            ent_grad: vec![0.0; ent.len()],
            pred_grad: vec![0.0; pred.len()],
            ent_opt: Adam::new(ent.len(), lr),
            pred_opt: Adam::new(pred.len(), lr),
            ent,
            pred,
            ent_touched: Vec::new(),
            ent_mark: vec![false; ne],
            pred_touched: Vec::new(),
            pred_mark: vec![false; np],
            cos: Vec::new(),
            sin: Vec::new(),
        });
        chunks.last_mut().unwrap().refresh_trig();
        lo += width;
    }
    chunks
}

fn join_chunks(kind: KgeKind, dim: usize, ne: usize, np: usize, chunks: &[Chunk]) -> EmbeddingModel {
    let w = kind.width();
    let mut entities = vec![0.0; ne * w * dim];
    let mut predicates = vec![0.0; np * dim];
    let mut lo = 0;
    for c in chunks {
        let rl = c.row_len();
        for e in 0..ne {
            let src = &c.ent[e * rl..(e + 1) * rl];
            let dst = &mut entities[e * w * dim..(e + 1) * w * dim];
            dst[lo..lo + c.width].copy_from_slice(&src[..c.width]);
            if kind == KgeKind::RotatE {
                dst[dim + lo..dim + lo + c.width].copy_from_slice(&src[c.width..]);
            }
        }
        for p in 0..np {
            predicates[p * dim + lo..p * dim + lo + c.width].copy_from_slice(&c.pred[p * c.width..(p + 1) * c.width]);
        }
        lo += c.width;
    }
    EmbeddingModel {
        kind,
        dim,
        num_entities: ne,
        num_predicates: np,
        entities,
        predicates,
    }
}

fn batch_distances(chunks: &[Chunk], batch: &KgeBatch) -> Vec<f64> {
    let slots = batch.negatives_per_positive() + 1;
    let n = batch.positives.len() * slots;
    let partials: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|c| {
            let mut out = vec![0.0; n];
            c.partial_distances(batch, &mut out);
            out
        })
        .collect();
    let mut dist = vec![0.0; n];
    for p in &partials {
        for (d, x) in dist.iter_mut().zip(p) {
            *d += x;
        }
    }
    dist
}

/// Training loss and the gradient with respect to the full entity and
/// predicate tables, in the layout of [`EmbeddingModel`].
pub fn loss_and_gradient(model: &EmbeddingModel, batch: &KgeBatch, cfg: &KgeConfig) -> (f64, Vec<f64>, Vec<f64>) {
    let mut chunks = split_chunks(model, model.dim, cfg.learning_rate);
    let dist = batch_distances(&chunks, batch);
    let (loss, coef) = loss_and_coefficients(
        &dist,
        batch.negatives_per_positive(),
        cfg.margin,
        cfg.adversarial_temperature,
    );
    let c = &mut chunks[0];
    c.accumulate(batch, &coef);
    (loss, c.ent_grad.clone(), c.pred_grad.clone())
}

/// Training loss without gradients.
pub fn batch_loss(model: &EmbeddingModel, batch: &KgeBatch, cfg: &KgeConfig) -> f64 {
    let dist: Vec<f64> = (0..batch.positives.len())
        .flat_map(|b| (0..=batch.negatives_per_positive()).map(move |j| (b, j)))
        .map(|(b, j)| model.distance(batch.triple(b, j)))
        .collect();
    loss_and_coefficients(
        &dist,
        batch.negatives_per_positive(),
        cfg.margin,
        cfg.adversarial_temperature,
    )
    .0
}

#[derive(Debug, Clone, Default)]
pub struct KgeReport {
    /// Loss of every step.
    pub losses: Vec<f64>,
}

impl KgeReport {
    fn tenth_mean(&self, last: bool) -> f64 {
        let n = (self.losses.len() / 10).max(1);
        let part = if last {
            &self.losses[self.losses.len() - n..]
        } else {
            &self.losses[..n]
        };
        part.iter().sum::<f64>() / n as f64
    }

    pub fn first_tenth_mean(&self) -> f64 {
        self.tenth_mean(false)
    }

    pub fn last_tenth_mean(&self) -> f64 {
        self.tenth_mean(true)
    }
}

/// Trains embeddings on the base triples of `g` with Adam and self-adversarial
/// negative sampling.
pub fn train_embeddings(g: &KnowledgeGraph, cfg: &KgeConfig) -> Result<(EmbeddingModel, KgeReport)> {
    cfg.validate()?;
    let triples: Vec<Triple> = g.base_triples().collect();
    if triples.is_empty() {
        return Err(Error::Data("cannot train embeddings on an empty graph".into()));
    }
    let ne = g.num_entities();
    let np = g.num_base_predicates();
    let mut rng = seed::derived_rng(cfg.seed, &[seed::tag("kge-init")]);
    let init = EmbeddingModel::init(cfg, ne, np, &mut rng);
    let mut chunks = split_chunks(&init, CHUNK_DIMS, cfg.learning_rate);
    drop(init);

    let mut rng = seed::derived_rng(cfg.seed, &[seed::tag("kge-batches")]);
    let mut report = KgeReport::default();
    info!(
        "training {} on {} triples, {} entities, dim {}, {} steps",
        cfg.kind,
        triples.len(),
        ne,
        cfg.dim,
        cfg.steps
    );
    for step in 0..cfg.steps {
        let batch = KgeBatch::sample(&triples, ne, cfg.batch_size, cfg.negatives, &mut rng);
        let dist = batch_distances(&chunks, &batch);
        let (loss, coef) = loss_and_coefficients(&dist, cfg.negatives, cfg.margin, cfg.adversarial_temperature);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "{} loss became {loss} at step {step} (learning rate {})",
                cfg.kind, cfg.learning_rate
            )));
        }
        report.losses.push(loss);
        chunks.par_iter_mut().for_each(|c| {
            c.accumulate(&batch, &coef);
            c.apply();
        });
        if step % 1000 == 0 {
            debug!("kge step {step}: loss {loss:.6}");
        }
    }
    let model = join_chunks(cfg.kind, cfg.dim, ne, np, &chunks);
    Ok((model, report))
}

/// Scores every rule by composition confidence against `interacts`.
pub fn score_rules(model: &EmbeddingModel, interacts: PredicateId, rules: &crate::rules::RuleSet) -> Vec<(Rule, RuleScore)> {
    rules
        .rules()
        .map(|r| (r.clone(), model.composition_confidence(interacts, r)))
        .collect()
}
