//! Interned knowledge-graph store.
//!
//! Every stored triple `(s, p, o)` is accompanied by its inverse
//! `(o, p__inv, s)`, so path search can treat the graph as undirected while
//! keeping predicate direction in the labels. Predicate ids come in pairs:
//! a base predicate has an even id and its inverse is the next odd id.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::dataset::InteractionSet;
use crate::error::{Error, Result};
use crate::intern::Interner;

/// Suffix marking the inverse of a predicate in external labels.
pub const INVERSE_SUFFIX: &str = "__inv";

/// Label of the user-item predicate added when interactions are merged.
pub const INTERACTS: &str = "interacts";

/// Prefix given to user labels when they become entities.
pub const USER_PREFIX: &str = "user:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PredicateId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl PredicateId {
    pub fn from_base(base: u32) -> Self {
        PredicateId(base * 2)
    }

    pub fn inverse(self) -> Self {
        PredicateId(self.0 ^ 1)
    }

    pub fn is_inverse(self) -> bool {
        self.0 & 1 == 1
    }

    /// Index of the underlying base predicate.
    pub fn base(self) -> u32 {
        self.0 >> 1
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub s: EntityId,
    pub p: PredicateId,
    pub o: EntityId,
}

impl Triple {
    pub fn inverse(self) -> Self {
        Triple {
            s: self.o,
            p: self.p.inverse(),
            o: self.s,
        }
    }
}

/// Incrementally collects labeled triples; [`GraphBuilder::build`] freezes
/// them into a [`KnowledgeGraph`].
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    entities: Interner,
    predicates: Interner,
    seen: HashSet<Triple>,
    triples: Vec<Triple>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Continue building on top of an existing graph; ids are preserved.
    pub fn from_graph(graph: &KnowledgeGraph) -> Self {
        GraphBuilder {
            entities: graph.entities.clone(),
            predicates: graph.predicates.clone(),
            seen: graph.triples.iter().copied().collect(),
            triples: graph.triples.clone(),
        }
    }

    pub fn entity(&mut self, label: &str) -> EntityId {
        EntityId(self.entities.intern(label))
    }

    pub fn has_entity(&self, label: &str) -> bool {
        self.entities.get(label).is_some()
    }

    /// Interns a predicate label. `x__inv` resolves to the inverse of `x`.
    pub fn predicate(&mut self, label: &str) -> PredicateId {
        match label.strip_suffix(INVERSE_SUFFIX) {
            Some(base) if !base.is_empty() => {
                PredicateId::from_base(self.predicates.intern(base)).inverse()
            }
            _ => PredicateId::from_base(self.predicates.intern(label)),
        }
    }

    pub fn has_predicate(&self, label: &str) -> bool {
        self.predicates.get(label).is_some()
    }

    /// Inserts a triple and its inverse. Returns false for duplicates.
    pub fn insert(&mut self, t: Triple) -> bool {
        if !self.seen.insert(t) {
            return false;
        }
        let inv = t.inverse();
        self.seen.insert(inv);
        self.triples.push(t);
        self.triples.push(inv);
        true
    }

    pub fn add(&mut self, s: &str, p: &str, o: &str) -> bool {
        let t = Triple {
            s: self.entity(s),
            p: self.predicate(p),
            o: self.entity(o),
        };
        self.insert(t)
    }

    pub fn build(self) -> KnowledgeGraph {
        let n = self.entities.len();
        let mut order: Vec<Triple> = self.triples.clone();
        order.sort_unstable();
        let mut offsets = vec![0usize; n + 1];
        for t in &order {
            offsets[t.s.index() + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let edge_preds = order.iter().map(|t| t.p).collect();
        let edge_objs = order.iter().map(|t| t.o).collect();
        KnowledgeGraph {
            entities: self.entities,
            predicates: self.predicates,
            triples: self.triples,
            offsets,
            edge_preds,
            edge_objs,
        }
    }
}

/// Immutable triple store with a per-entity adjacency index sorted by
/// `(predicate, object)`.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Interner,
    predicates: Interner,
    triples: Vec<Triple>,
    offsets: Vec<usize>,
    edge_preds: Vec<PredicateId>,
    edge_objs: Vec<EntityId>,
}

impl KnowledgeGraph {
    /// Builds a graph from labeled triples, adding inverses and dropping
    /// duplicates.
    pub fn from_labeled<S: AsRef<str>>(triples: &[[S; 3]]) -> Self {
        let mut b = GraphBuilder::new();
        for [s, p, o] in triples {
            b.add(s.as_ref(), p.as_ref(), o.as_ref());
        }
        b.build()
    }

    /// Reads a `head<TAB>relation<TAB>tail` file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut b = GraphBuilder::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = if line.contains('\t') {
                line.split('\t').map(str::trim).collect()
            } else {
                line.split_whitespace().collect()
            };
            if fields.len() != 3 {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected 3 fields, found {}", fields.len()),
                ));
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(Error::parse(path, i + 1, "empty label"));
            }
            b.add(fields[0], fields[1], fields[2]);
        }
        Ok(b.build())
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Number of predicate ids, inverses included.
    pub fn num_predicates(&self) -> usize {
        self.predicates.len() * 2
    }

    pub fn num_base_predicates(&self) -> usize {
        self.predicates.len()
    }

    /// All directed triples, inverses included, in insertion order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Stored triples whose predicate is not an inverse.
    pub fn base_triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.triples.iter().copied().filter(|t| !t.p.is_inverse())
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        self.entities.label(e.0)
    }

    pub fn predicate_id(&self, label: &str) -> Option<PredicateId> {
        match label.strip_suffix(INVERSE_SUFFIX) {
            Some(base) if !base.is_empty() => self
                .predicates
                .get(base)
                .map(|b| PredicateId::from_base(b).inverse()),
            _ => self.predicates.get(label).map(PredicateId::from_base),
        }
    }

    pub fn predicate_label(&self, p: PredicateId) -> String {
        let base = self.predicates.label(p.base());
        if p.is_inverse() {
            format!("{base}{INVERSE_SUFFIX}")
        } else {
            base.to_owned()
        }
    }

    /// Outgoing `(predicate, object)` edges of `e`, sorted.
    pub fn edges(&self, e: EntityId) -> impl Iterator<Item = (PredicateId, EntityId)> + '_ {
        let r = self.edge_range(e);
        self.edge_preds[r.clone()]
            .iter()
            .copied()
            .zip(self.edge_objs[r].iter().copied())
    }

    pub fn degree(&self, e: EntityId) -> usize {
        let r = self.edge_range(e);
        r.end - r.start
    }

    /// Objects `o` with `(e, p, o)` stored, sorted by id.
    pub fn neighbors(&self, e: EntityId, p: PredicateId) -> &[EntityId] {
        if e.index() >= self.num_entities() {
            return &[];
        }
        let r = self.edge_range(e);
        let preds = &self.edge_preds[r.clone()];
        let lo = preds.partition_point(|&q| q < p);
        let hi = preds.partition_point(|&q| q <= p);
        &self.edge_objs[r.start + lo..r.start + hi]
    }

    pub fn contains(&self, t: Triple) -> bool {
        self.neighbors(t.s, t.p).binary_search(&t.o).is_ok()
    }

    fn edge_range(&self, e: EntityId) -> Range<usize> {
        self.offsets[e.index()]..self.offsets[e.index() + 1]
    }
}

/// Maps dataset item labels to knowledge-graph entity labels.
#[derive(Debug, Clone, Default)]
pub struct ItemMap {
    map: std::collections::HashMap<String, String>,
    identity: bool,
}

impl ItemMap {
    /// Every item label is also its entity label (KGCN-style files, where
    /// item ids are entity ids).
    pub fn identity() -> Self {
        ItemMap {
            map: Default::default(),
            identity: true,
        }
    }

    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        ItemMap {
            map: pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect(),
            identity: false,
        }
    }

    pub fn get<'a>(&'a self, item: &'a str) -> Option<&'a str> {
        if self.identity {
            Some(item)
        } else {
            self.map.get(item).map(String::as_str)
        }
    }
}

/// A knowledge graph extended with user entities and `interacts` edges.
#[derive(Debug, Clone)]
pub struct AugmentedGraph {
    graph: KnowledgeGraph,
    users: Range<u32>,
    interacts: PredicateId,
    item_entities: Vec<EntityId>,
}

impl AugmentedGraph {
    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn interacts(&self) -> PredicateId {
        self.interacts
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn user_entities(&self) -> impl Iterator<Item = EntityId> {
        self.users.clone().map(EntityId)
    }

    /// Entity of the dataset user with vocabulary index `user`.
    pub fn user_entity(&self, user: u32) -> EntityId {
        assert!(user < self.users.end - self.users.start, "user index out of range");
        EntityId(self.users.start + user)
    }

    pub fn is_user(&self, e: EntityId) -> bool {
        self.users.contains(&e.0)
    }

    pub fn num_items(&self) -> usize {
        self.item_entities.len()
    }

    /// Entity of the dataset item with vocabulary index `item`.
    pub fn item_entity(&self, item: u32) -> EntityId {
        self.item_entities[item as usize]
    }

    pub fn item_entities(&self) -> &[EntityId] {
        &self.item_entities
    }

    pub fn neighbors(&self, e: EntityId, p: PredicateId) -> &[EntityId] {
        self.graph.neighbors(e, p)
    }

    pub fn has_interaction(&self, user: EntityId, item: EntityId) -> bool {
        self.graph.contains(Triple {
            s: user,
            p: self.interacts,
            o: item,
        })
    }

    /// Replaces the underlying graph, keeping the user and item bookkeeping.
    /// Lets tests build graphs that break user locality.
    #[cfg(test)]
    pub(crate) fn with_graph_for_tests(&self, graph: KnowledgeGraph) -> AugmentedGraph {
        AugmentedGraph {
            graph,
            ..self.clone()
        }
    }

    pub fn num_interactions(&self) -> usize {
        self.user_entities()
            .map(|u| self.neighbors(u, self.interacts).len())
            .sum()
    }
}

/// Adds every dataset user as an entity and one `interacts` edge (plus
/// inverse) per positive record of `interactions`.
///
/// Items are resolved through `item_map`; an item whose entity label is not
/// yet in the graph becomes a new, isolated entity. Users are appended after
/// all items so that they occupy a contiguous id range.
pub fn merge_interactions(
    kg: &KnowledgeGraph,
    interactions: &InteractionSet,
    item_map: &ItemMap,
) -> Result<AugmentedGraph> {
    let vocab = interactions.vocab();
    let mut b = GraphBuilder::from_graph(kg);
    if b.has_predicate(INTERACTS) {
        return Err(Error::Data(format!(
            "knowledge graph already uses the reserved predicate `{INTERACTS}`"
        )));
    }

    let mut item_entities = Vec::with_capacity(vocab.num_items());
    for label in vocab.item_labels() {
        let entity = item_map
            .get(label)
            .ok_or_else(|| Error::UnmappedItem(label.clone()))?;
        item_entities.push(b.entity(entity));
    }

    let user_start = b.entities.len() as u32;
    for label in vocab.user_labels() {
        let entity = format!("{USER_PREFIX}{label}");
        if b.has_entity(&entity) {
            return Err(Error::UserCollision(entity));
        }
        b.entity(&entity);
    }
    let user_end = b.entities.len() as u32;

    let interacts = b.predicate(INTERACTS);
    for r in interactions.records().iter().filter(|r| r.positive) {
        b.insert(Triple {
            s: EntityId(user_start + r.user),
            p: interacts,
            o: item_entities[r.item as usize],
        });
    }

    Ok(AugmentedGraph {
        graph: b.build(),
        users: user_start..user_end,
        interacts,
        item_entities,
    })
}

impl fmt::Display for KnowledgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} entities, {} predicates, {} directed triples",
            self.num_entities(),
            self.num_base_predicates(),
            self.triples.len()
        )
    }
}
