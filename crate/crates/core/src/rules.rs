//! Chain rules for the `interacts` predicate: mining, grounding checks,
//! closed-world confidence and ranking.
//!
//! A rule body is a predicate sequence `p1, ..., ph` read as a path
//! `u -p1-> e1 -p2-> ... -ph-> m`. Groundings never traverse an edge and then
//! immediately walk back over the same edge, and when a rule is checked for a
//! pair `(u, m)` the edge `(u, interacts, m)` itself (in either direction) is
//! unavailable.

use std::cmp::Ordering;
use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::{debug, warn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{AugmentedGraph, EntityId, KnowledgeGraph, PredicateId};
use crate::seed;

/// Longest rule body the miner supports.
pub const MAX_RULE_LEN: usize = 8;

/// Rule body; the head is always `interacts`.
///
/// Ordering is canonical: shorter bodies first, then lexicographic by
/// predicate id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    body: Vec<PredicateId>,
}

impl Rule {
    pub fn new(body: Vec<PredicateId>) -> Self {
        assert!(!body.is_empty(), "rule body must not be empty");
        Rule { body }
    }

    pub fn body(&self) -> &[PredicateId] {
        &self.body
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    pub fn display<'a>(&'a self, g: &'a KnowledgeGraph) -> impl fmt::Display + 'a {
        RuleDisplay { rule: self, g }
    }
}

impl Ord for Rule {
    fn cmp(&self, other: &Self) -> Ordering {
        self.body
            .len()
            .cmp(&other.body.len())
            .then_with(|| self.body.cmp(&other.body))
    }
}

impl PartialOrd for Rule {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct RuleDisplay<'a> {
    rule: &'a Rule,
    g: &'a KnowledgeGraph,
}

impl fmt::Display for RuleDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &p) in self.rule.body.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(&self.g.predicate_label(p))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Cwa,
    RotatE,
    TransE,
    /// Not scored yet (freshly mined).
    None,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Cwa => "cwa",
            Strategy::RotatE => "rotate",
            Strategy::TransE => "transe",
            Strategy::None => "none",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cwa" => Ok(Strategy::Cwa),
            "rotate" => Ok(Strategy::RotatE),
            "transe" => Ok(Strategy::TransE),
            "none" => Ok(Strategy::None),
            other => Err(Error::Config(format!(
                "unknown filtering strategy `{other}` (expected cwa, rotate or transe)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleScore {
    pub strategy: Strategy,
    pub value: f64,
    /// Set when counting stopped at the grounding cap.
    pub estimated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleEntry {
    pub rule: Rule,
    pub score: Option<RuleScore>,
}

/// Ordered, duplicate-free rule list. After [`rank_rules`] the order is the
/// one used for feature columns and weight indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    entries: Vec<RuleEntry>,
}

impl RuleSet {
    /// Unscored rules in canonical order, duplicates removed.
    pub fn from_rules(rules: impl IntoIterator<Item = Rule>) -> Self {
        let set: BTreeSet<Rule> = rules.into_iter().collect();
        RuleSet {
            entries: set
                .into_iter()
                .map(|rule| RuleEntry { rule, score: None })
                .collect(),
        }
    }

    /// Keeps the given order, e.g. a ranking.
    pub fn from_ranked(entries: Vec<RuleEntry>) -> Self {
        RuleSet { entries }
    }

    pub fn entries(&self) -> &[RuleEntry] {
        &self.entries
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.entries.iter().map(|e| &e.rule)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &Rule {
        &self.entries[i].rule
    }

    /// Number of rules per body length, indexed by length.
    pub fn length_histogram(&self) -> Vec<usize> {
        let max = self.rules().map(Rule::len).max().unwrap_or(0);
        let mut hist = vec![0; max + 1];
        for r in self.rules() {
            hist[r.len()] += 1;
        }
        hist
    }

    pub fn max_len(&self) -> usize {
        self.rules().map(Rule::len).max().unwrap_or(0)
    }

    /// Writes `score<TAB>strategy<TAB>p1,p2,...` lines.
    pub fn write(&self, path: impl AsRef<Path>, g: &KnowledgeGraph) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for e in &self.entries {
            let (value, strategy) = match e.score {
                Some(s) => (s.value, s.strategy),
                None => (0.0, Strategy::None),
            };
            let labels: Vec<String> = e.rule.body.iter().map(|&p| g.predicate_label(p)).collect();
            if labels.iter().any(|l| l.contains([',', '\t', '\n'])) {
                return Err(Error::Data(format!(
                    "predicate label in rule {} cannot be written to a rules file",
                    labels.join(",")
                )));
            }
            writeln!(out, "{value}\t{strategy}\t{}", labels.join(",")).unwrap();
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>, g: &KnowledgeGraph) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [value, strategy, body] = fields.as_slice() else {
                return Err(Error::parse(path, i + 1, "expected score, strategy and body"));
            };
            let value: f64 = value
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad score `{value}`")))?;
            let strategy: Strategy = strategy
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad strategy `{strategy}`")))?;
            let body = body
                .split(',')
                .map(|label| {
                    g.predicate_id(label)
                        .ok_or_else(|| Error::parse(path, i + 1, format!("unknown predicate `{label}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if body.is_empty() {
                return Err(Error::parse(path, i + 1, "empty rule body"));
            }
            let score = (strategy != Strategy::None).then_some(RuleScore {
                strategy,
                value,
                estimated: false,
            });
            entries.push(RuleEntry {
                rule: Rule::new(body),
                score,
            });
        }
        Ok(RuleSet { entries })
    }
}

#[derive(Debug, Clone)]
pub struct MiningConfig {
    /// Maximum body length `I`.
    pub max_len: usize,
    /// Number of positive pairs searched; `None` searches all of them.
    pub pair_cap: Option<usize>,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            max_len: 3,
            pair_cap: None,
            seed: 0,
        }
    }
}

/// What is known about the entity preceding (or following) a path end.
/// Only one specific neighbour can ever be forbidden by the no-backtracking
/// constraint, so two distinct ones are as good as any number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Via {
    Start,
    One(EntityId),
    Many,
}

impl Via {
    fn merge(entry: Entry<'_, impl std::hash::Hash + Eq, Via>, from: EntityId) {
        match entry {
            Entry::Vacant(v) => {
                v.insert(Via::One(from));
            }
            Entry::Occupied(mut o) => {
                if let Via::One(prev) = *o.get() {
                    if prev != from {
                        o.insert(Via::Many);
                    }
                }
            }
        }
    }

    fn is(self, e: EntityId) -> bool {
        self == Via::One(e)
    }
}

/// Fixed-capacity predicate sequence used as a hash key during mining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Seq {
    len: u8,
    preds: [u32; MAX_RULE_LEN],
}

impl Seq {
    const EMPTY: Seq = Seq {
        len: 0,
        preds: [0; MAX_RULE_LEN],
    };

    fn first(&self) -> Option<PredicateId> {
        (self.len > 0).then(|| PredicateId(self.preds[0]))
    }

    fn last(&self) -> Option<PredicateId> {
        (self.len > 0).then(|| PredicateId(self.preds[self.len as usize - 1]))
    }

    fn push(mut self, p: PredicateId) -> Seq {
        self.preds[self.len as usize] = p.0;
        self.len += 1;
        self
    }

    fn prepend(self, p: PredicateId) -> Seq {
        let mut out = Seq::EMPTY.push(p);
        out.preds[1..=self.len as usize].copy_from_slice(&self.preds[..self.len as usize]);
        out.len = self.len + 1;
        out
    }

    fn concat(self, tail: Seq) -> Rule {
        let body = self.preds[..self.len as usize]
            .iter()
            .chain(&tail.preds[..tail.len as usize])
            .map(|&p| PredicateId(p))
            .collect();
        Rule::new(body)
    }
}

/// The edge `(u, interacts, m)` and its inverse, which a grounding for the
/// pair `(u, m)` may not use.
#[derive(Debug, Clone, Copy)]
struct TargetEdge {
    user: EntityId,
    item: EntityId,
    interacts: PredicateId,
}

impl TargetEdge {
    fn blocks(&self, s: EntityId, p: PredicateId, o: EntityId) -> bool {
        (s == self.user && p == self.interacts && o == self.item)
            || (s == self.item && p == self.interacts.inverse() && o == self.user)
    }
}

fn blocked(target: Option<TargetEdge>, s: EntityId, p: PredicateId, o: EntityId) -> bool {
    target.is_some_and(|t| t.blocks(s, p, o))
}

type Layer = HashMap<(EntityId, Seq), Via>;

fn forward_layers(g: &KnowledgeGraph, start: EntityId, depth: usize, target: TargetEdge) -> Vec<Layer> {
    let mut layers: Vec<Layer> = Vec::with_capacity(depth + 1);
    layers.push(HashMap::from([((start, Seq::EMPTY), Via::Start)]));
    for d in 0..depth {
        let mut next = Layer::new();
        for (&(x, seq), &via) in &layers[d] {
            let back = seq.last().map(PredicateId::inverse);
            for (p, y) in g.edges(x) {
                if target.blocks(x, p, y) || (Some(p) == back && via.is(y)) {
                    continue;
                }
                Via::merge(next.entry((y, seq.push(p))), x);
            }
        }
        layers.push(next);
    }
    layers
}

/// Paths grown backwards from `end`; each key holds the path's first entity
/// and its forward-direction predicate sequence, the value the entity that
/// follows it.
fn backward_layers(g: &KnowledgeGraph, end: EntityId, depth: usize, target: TargetEdge) -> Vec<Layer> {
    let mut layers: Vec<Layer> = Vec::with_capacity(depth + 1);
    layers.push(HashMap::from([((end, Seq::EMPTY), Via::Start)]));
    for d in 0..depth {
        let mut next = Layer::new();
        for (&(z, seq), &via) in &layers[d] {
            let back = seq.first().map(PredicateId::inverse);
            for (rev, x) in g.edges(z) {
                let q = rev.inverse();
                if target.blocks(x, q, z) || (Some(q) == back && via.is(x)) {
                    continue;
                }
                Via::merge(next.entry((x, seq.prepend(q))), z);
            }
        }
        layers.push(next);
    }
    layers
}

/// All rule bodies of length `2..=max_len` grounded by a path from `user` to
/// `item`, found by meeting a forward search of depth `ceil(I/2)` with a
/// backward search of depth `floor(I/2)`.
pub fn rules_between(g: &AugmentedGraph, user: EntityId, item: EntityId, max_len: usize) -> BTreeSet<Rule> {
    assert!((1..=MAX_RULE_LEN).contains(&max_len));
    let target = TargetEdge {
        user,
        item,
        interacts: g.interacts(),
    };
    let fwd_depth = max_len.div_ceil(2);
    let bwd_depth = max_len / 2;
    let kg = g.graph();
    let fwd = forward_layers(kg, user, fwd_depth, target);
    let bwd = backward_layers(kg, item, bwd_depth, target);

    let mut by_entity: Vec<HashMap<EntityId, Vec<(Seq, Via)>>> = Vec::with_capacity(bwd.len());
    for layer in &bwd {
        let mut m: HashMap<EntityId, Vec<(Seq, Via)>> = HashMap::new();
        for (&(x, seq), &via) in layer {
            m.entry(x).or_default().push((seq, via));
        }
        by_entity.push(m);
    }

    let mut out = BTreeSet::new();
    for len in 2..=max_len {
        let a = len.min(fwd_depth);
        let b = len - a;
        for (&(x, fseq), &fvia) in &fwd[a] {
            let Some(tails) = by_entity[b].get(&x) else {
                continue;
            };
            for &(bseq, bvia) in tails {
                if b > 0 {
                    // Joining `y -p-> x` with `x -q-> z`: reject if that is
                    // the same edge walked back and forth.
                    if let (Some(p), Some(q), Via::One(y), Via::One(z)) = (fseq.last(), bseq.first(), fvia, bvia) {
                        if q == p.inverse() && y == z {
                            continue;
                        }
                    }
                }
                out.insert(fseq.concat(bseq));
            }
        }
    }
    out
}

/// Positive training pairs `(user, item)` present as `interacts` edges.
pub fn positive_pairs(g: &AugmentedGraph) -> Vec<(EntityId, EntityId)> {
    g.user_entities()
        .flat_map(|u| g.neighbors(u, g.interacts()).iter().map(move |&m| (u, m)))
        .collect()
}

/// Candidate rules: the union of rule bodies connecting each positive pair
/// (all pairs, or `pair_cap` of them sampled uniformly).
pub fn mine_rules(g: &AugmentedGraph, cfg: &MiningConfig) -> Result<RuleSet> {
    if cfg.max_len < 2 {
        return Err(Error::Config(format!(
            "maximum rule length must be at least 2, got {}",
            cfg.max_len
        )));
    }
    if cfg.max_len > MAX_RULE_LEN {
        return Err(Error::Config(format!(
            "maximum rule length {} exceeds the supported {MAX_RULE_LEN}",
            cfg.max_len
        )));
    }
    let mut pairs = positive_pairs(g);
    if let Some(cap) = cfg.pair_cap {
        if cap < pairs.len() {
            let mut rng = seed::derived_rng(cfg.seed, &[seed::tag("mine-pairs")]);
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, pairs.len(), cap).into_vec();
            picked.sort_unstable();
            pairs = picked.into_iter().map(|i| pairs[i]).collect();
        }
    }
    debug!("mining rules over {} pairs", pairs.len());
    let found = pairs
        .par_iter()
        .fold(BTreeSet::new, |mut acc, &(u, m)| {
            acc.extend(rules_between(g, u, m, cfg.max_len));
            acc
        })
        .reduce(BTreeSet::new, |mut a, b| {
            a.extend(b);
            a
        });
    Ok(RuleSet::from_rules(found))
}

/// Entities reachable from `start` along `body`, with what is known about
/// each one's predecessor.
fn reach(g: &KnowledgeGraph, start: EntityId, body: &[PredicateId], target: Option<TargetEdge>) -> HashMap<EntityId, Via> {
    let mut frontier = HashMap::from([(start, Via::Start)]);
    let mut last: Option<PredicateId> = None;
    for &p in body {
        let back = last.map(PredicateId::inverse);
        let mut next = HashMap::new();
        for (&x, &via) in &frontier {
            for &y in g.neighbors(x, p) {
                if blocked(target, x, p, y) || (Some(p) == back && via.is(y)) {
                    continue;
                }
                Via::merge(next.entry(y), x);
            }
        }
        if next.is_empty() {
            return next;
        }
        frontier = next;
        last = Some(p);
    }
    frontier
}

/// Whether `rule` has a grounding from `user` to `item`.
pub fn match_rule(g: &AugmentedGraph, user: EntityId, item: EntityId, rule: &Rule) -> bool {
    let target = TargetEdge {
        user,
        item,
        interacts: g.interacts(),
    };
    reach(g.graph(), user, &rule.body, Some(target)).contains_key(&item)
}

/// Closed-world confidence with its raw counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwaCounts {
    /// Distinct `(u, m)` with a body grounding that are also positives.
    pub support: usize,
    /// Distinct `(u, m)` with a body grounding.
    pub body: usize,
    pub estimated: bool,
}

/// Counts body groundings user by user. Once `grounding_cap` distinct pairs
/// have been seen the remaining users are skipped and the result is marked
/// as an estimate.
pub fn cwa_counts(g: &AugmentedGraph, rule: &Rule, grounding_cap: usize) -> CwaCounts {
    let mut counts = CwaCounts {
        support: 0,
        body: 0,
        estimated: false,
    };
    for u in g.user_entities() {
        if counts.body >= grounding_cap {
            counts.estimated = true;
            break;
        }
        for &m in reach(g.graph(), u, &rule.body, None).keys() {
            if g.has_interaction(u, m) {
                if match_rule(g, u, m, rule) {
                    counts.support += 1;
                    counts.body += 1;
                }
            } else {
                counts.body += 1;
            }
        }
    }
    counts
}

/// Standard confidence under the closed-world assumption. `None` when the
/// body has no grounding at all.
pub fn cwa_confidence(g: &AugmentedGraph, rule: &Rule, grounding_cap: usize) -> Option<RuleScore> {
    let c = cwa_counts(g, rule, grounding_cap);
    if c.body == 0 {
        return None;
    }
    Some(RuleScore {
        strategy: Strategy::Cwa,
        value: c.support as f64 / c.body as f64,
        estimated: c.estimated,
    })
}

/// Scores every rule by CWA confidence; rules without groundings are
/// dropped with a warning.
pub fn score_cwa(g: &AugmentedGraph, rules: &RuleSet, grounding_cap: usize) -> Vec<(Rule, RuleScore)> {
    let scored: Vec<Option<RuleScore>> = rules
        .entries
        .par_iter()
        .map(|e| cwa_confidence(g, &e.rule, grounding_cap))
        .collect();
    rules
        .entries
        .iter()
        .zip(scored)
        .filter_map(|(e, s)| match s {
            Some(s) => Some((e.rule.clone(), s)),
            None => {
                warn!("rule {} has no grounding; dropped", e.rule.display(g.graph()));
                None
            }
        })
        .collect()
}

/// Keeps the `top` best-scored rules: score descending, then shorter
/// bodies, then lexicographic body order.
pub fn rank_rules(scored: Vec<(Rule, RuleScore)>, top: usize) -> RuleSet {
    let mut scored = scored;
    scored.sort_by(|(ra, sa), (rb, sb)| sb.value.total_cmp(&sa.value).then_with(|| ra.cmp(rb)));
    let mut seen = BTreeSet::new();
    let entries = scored
        .into_iter()
        .filter(|(r, _)| seen.insert(r.clone()))
        .take(top)
        .map(|(rule, s)| RuleEntry { rule, score: Some(s) })
        .collect();
    RuleSet { entries }
}
