//! Typed knowledge-graph storage and user→item path enumeration.
//!
//! Triples are stored once in their declared orientation and indexed from
//! both endpoints, so traversal can walk an edge either way. Every step of a
//! returned path records whether it followed the stored orientation
//! (`forward`) or walked it backwards.
//!
//! ```
//! use kgrec_core::kg::{EntityKind, KnowledgeGraph, Relation, Triple};
//!
//! let mut g = KnowledgeGraph::new();
//! let u = g.add_entity(EntityKind::User, "u0").unwrap();
//! let f = g.add_entity(EntityKind::Feature, "garden").unwrap();
//! let i = g.add_entity(EntityKind::Item, "Justified").unwrap();
//! g.add_triple(Triple::new(u, Relation::Mention, f)).unwrap();
//! g.add_triple(Triple::new(i, Relation::DescribeAs, f)).unwrap();
//! assert_eq!(g.find_2hop(u, i).unwrap().len(), 1);
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KgError {
    #[error("relation {relation} expects {expected_head:?} -> {expected_tail:?}, got {head} -> {tail}")]
    SignatureViolation {
        relation: Relation,
        head: EntityId,
        tail: EntityId,
        expected_head: EntityKind,
        expected_tail: EntityKind,
    },
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("entity {0} already declared")]
    DuplicateEntity(EntityId),
    #[error("entity {0} needs a non-empty label")]
    EmptyLabel(EntityId),
    #[error("expected a {expected:?} entity, got {got}")]
    WrongKind { expected: EntityKind, got: EntityId },
    #[error("invalid entity id `{0}`")]
    BadEntityId(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
}

/// The five entity types of the review knowledge graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    User,
    Item,
    Feature,
    Brand,
    Category,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::User,
        EntityKind::Item,
        EntityKind::Feature,
        EntityKind::Brand,
        EntityKind::Category,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Item => "item",
            EntityKind::Feature => "feature",
            EntityKind::Brand => "brand",
            EntityKind::Category => "category",
        }
    }

    /// Kinds whose labels carry a user-readable rationale on 3-hop paths.
    pub fn is_descriptive(self) -> bool {
        matches!(self, EntityKind::Feature | EntityKind::Category)
    }
}

impl FromStr for EntityKind {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| KgError::BadEntityId(s.to_string()))
    }
}

/// Key of an entity: its kind plus a per-kind local id. Labels live in the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId {
    pub kind: EntityKind,
    pub local_id: u32,
}

impl EntityId {
    pub const fn new(kind: EntityKind, local_id: u32) -> Self {
        Self { kind, local_id }
    }

    pub const fn user(local_id: u32) -> Self {
        Self::new(EntityKind::User, local_id)
    }

    pub const fn item(local_id: u32) -> Self {
        Self::new(EntityKind::Item, local_id)
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.local_id)
    }
}

impl FromStr for EntityId {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, id) = s
            .split_once(':')
            .ok_or_else(|| KgError::BadEntityId(s.to_string()))?;
        let kind = kind.parse::<EntityKind>()?;
        let local_id = id
            .parse::<u32>()
            .map_err(|_| KgError::BadEntityId(s.to_string()))?;
        Ok(Self { kind, local_id })
    }
}

impl Serialize for EntityId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The eight relation types, each with a fixed head/tail signature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Purchase,
    Mention,
    DescribeAs,
    BelongTo,
    ProducedBy,
    AlsoBought,
    AlsoViewed,
    BoughtTogether,
}

impl Relation {
    pub const ALL: [Relation; 8] = [
        Relation::Purchase,
        Relation::Mention,
        Relation::DescribeAs,
        Relation::BelongTo,
        Relation::ProducedBy,
        Relation::AlsoBought,
        Relation::AlsoViewed,
        Relation::BoughtTogether,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Purchase => "purchase",
            Relation::Mention => "mention",
            Relation::DescribeAs => "describe_as",
            Relation::BelongTo => "belong_to",
            Relation::ProducedBy => "produced_by",
            Relation::AlsoBought => "also_bought",
            Relation::AlsoViewed => "also_viewed",
            Relation::BoughtTogether => "bought_together",
        }
    }

    /// (head kind, tail kind) accepted by this relation.
    pub fn signature(self) -> (EntityKind, EntityKind) {
        use EntityKind::*;
        match self {
            Relation::Purchase => (User, Item),
            Relation::Mention => (User, Feature),
            Relation::DescribeAs => (Item, Feature),
            Relation::BelongTo => (Item, Category),
            Relation::ProducedBy => (Item, Brand),
            Relation::AlsoBought | Relation::AlsoViewed | Relation::BoughtTogether => (Item, Item),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        // upstream dumps spell the last relation out in full
        if s == "bought_together_by_same_user" {
            return Ok(Relation::BoughtTogether);
        }
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| KgError::UnknownRelation(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: Relation,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: Relation, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    pub fn check_signature(&self) -> Result<(), KgError> {
        let (expected_head, expected_tail) = self.relation.signature();
        if self.head.kind != expected_head || self.tail.kind != expected_tail {
            return Err(KgError::SignatureViolation {
                relation: self.relation,
                head: self.head,
                tail: self.tail,
                expected_head,
                expected_tail,
            });
        }
        Ok(())
    }
}

/// One traversal of a stored edge. `forward` is true when walked head→tail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DirectedStep {
    pub relation: Relation,
    pub forward: bool,
}

impl DirectedStep {
    pub const fn fwd(relation: Relation) -> Self {
        Self {
            relation,
            forward: true,
        }
    }

    pub const fn bwd(relation: Relation) -> Self {
        Self {
            relation,
            forward: false,
        }
    }

    /// The stored triple this step walks when leaving `from` and arriving at `to`.
    pub fn stored_triple(&self, from: EntityId, to: EntityId) -> Triple {
        if self.forward {
            Triple::new(from, self.relation, to)
        } else {
            Triple::new(to, self.relation, from)
        }
    }
}

impl fmt::Display for DirectedStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arrow = if self.forward { "fwd" } else { "bwd" };
        write!(f, "{}/{}", self.relation, arrow)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Direction {
    Out,
    In,
    #[default]
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Path2 {
    pub user: EntityId,
    pub step1: DirectedStep,
    pub mid: EntityId,
    pub step2: DirectedStep,
    pub item: EntityId,
}

impl Path2 {
    pub fn entities(&self) -> [EntityId; 3] {
        [self.user, self.mid, self.item]
    }

    pub fn stored_triples(&self) -> [Triple; 2] {
        [
            self.step1.stored_triple(self.user, self.mid),
            self.step2.stored_triple(self.mid, self.item),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Path3 {
    pub user: EntityId,
    pub steps: [DirectedStep; 3],
    pub mids: [EntityId; 2],
    pub item: EntityId,
}

impl Path3 {
    pub fn entities(&self) -> [EntityId; 4] {
        [self.user, self.mids[0], self.mids[1], self.item]
    }

    pub fn stored_triples(&self) -> [Triple; 3] {
        [
            self.steps[0].stored_triple(self.user, self.mids[0]),
            self.steps[1].stored_triple(self.mids[0], self.mids[1]),
            self.steps[2].stored_triple(self.mids[1], self.item),
        ]
    }
}

/// Intermediate entities of a 3-hop path whose kind is descriptive
/// (feature words and categories), in path order.
pub fn get_desc(path: &Path3) -> Vec<EntityId> {
    path.mids
        .iter()
        .copied()
        .filter(|e| e.kind.is_descriptive())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Adjacent {
    other: EntityId,
    step: DirectedStep,
}

/// In-memory triple store with adjacency indexed from both endpoints.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    labels: HashMap<EntityId, String>,
    next_local: [u32; 5],
    triples: BTreeSet<Triple>,
    // sorted by (other, step); built incrementally
    adjacency: HashMap<EntityId, Vec<Adjacent>>,
}

fn kind_slot(kind: EntityKind) -> usize {
    kind as usize
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a new entity with the next free local id of its kind.
    pub fn add_entity(&mut self, kind: EntityKind, label: &str) -> Result<EntityId, KgError> {
        let id = EntityId::new(kind, self.next_local[kind_slot(kind)]);
        self.insert_entity(id, label)?;
        Ok(id)
    }

    /// Declares an entity under an explicit id.
    pub fn insert_entity(&mut self, id: EntityId, label: &str) -> Result<(), KgError> {
        if self.labels.contains_key(&id) {
            return Err(KgError::DuplicateEntity(id));
        }
        if id.kind != EntityKind::User && label.trim().is_empty() {
            return Err(KgError::EmptyLabel(id));
        }
        self.labels.insert(id, label.to_string());
        let slot = &mut self.next_local[kind_slot(id.kind)];
        *slot = (*slot).max(id.local_id + 1);
        self.adjacency.entry(id).or_default();
        Ok(())
    }

    /// Stores a triple. Returns `false` when it was already present.
    pub fn add_triple(&mut self, t: Triple) -> Result<bool, KgError> {
        t.check_signature()?;
        for e in [t.head, t.tail] {
            if !self.labels.contains_key(&e) {
                return Err(KgError::UnknownEntity(e));
            }
        }
        if !self.triples.insert(t) {
            return Ok(false);
        }
        self.link(
            t.head,
            Adjacent {
                other: t.tail,
                step: DirectedStep::fwd(t.relation),
            },
        );
        self.link(
            t.tail,
            Adjacent {
                other: t.head,
                step: DirectedStep::bwd(t.relation),
            },
        );
        Ok(true)
    }

    /// Drops a stored triple from both indices. Returns whether it existed.
    pub fn remove_triple(&mut self, t: &Triple) -> bool {
        if !self.triples.remove(t) {
            return false;
        }
        self.unlink(
            t.head,
            Adjacent {
                other: t.tail,
                step: DirectedStep::fwd(t.relation),
            },
        );
        self.unlink(
            t.tail,
            Adjacent {
                other: t.head,
                step: DirectedStep::bwd(t.relation),
            },
        );
        true
    }

    fn link(&mut self, at: EntityId, adj: Adjacent) {
        let list = self.adjacency.entry(at).or_default();
        if let Err(pos) = list.binary_search(&adj) {
            list.insert(pos, adj);
        }
    }

    fn unlink(&mut self, at: EntityId, adj: Adjacent) {
        if let Some(list) = self.adjacency.get_mut(&at) {
            if let Ok(pos) = list.binary_search(&adj) {
                list.remove(pos);
            }
        }
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.labels.contains_key(&e)
    }

    pub fn contains_triple(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn label(&self, e: EntityId) -> Option<&str> {
        self.labels.get(&e).map(String::as_str)
    }

    /// Label of an entity known to be present; falls back to the id string.
    pub fn label_or_id(&self, e: EntityId) -> String {
        self.label(e).map(str::to_string).unwrap_or_else(|| e.to_string())
    }

    pub fn entity_count(&self) -> usize {
        self.labels.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    /// All entities, ordered by kind then local id.
    pub fn entities(&self) -> Vec<EntityId> {
        let mut v: Vec<EntityId> = self.labels.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn entities_of(&self, kind: EntityKind) -> Vec<EntityId> {
        let mut v: Vec<EntityId> = self.labels.keys().copied().filter(|e| e.kind == kind).collect();
        v.sort_unstable();
        v
    }

    /// Stored triples in (head, relation, tail) order.
    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    fn adjacent(&self, e: EntityId) -> Result<&[Adjacent], KgError> {
        self.adjacency
            .get(&e)
            .map(Vec::as_slice)
            .ok_or(KgError::UnknownEntity(e))
    }

    /// Adjacent entities of `e`, optionally restricted to one relation and
    /// one traversal direction, ordered by entity kind then local id.
    pub fn neighbors(
        &self,
        e: EntityId,
        relation: Option<Relation>,
        direction: Direction,
    ) -> Result<Vec<(EntityId, DirectedStep)>, KgError> {
        Ok(self
            .adjacent(e)?
            .iter()
            .filter(|a| relation.is_none_or(|r| a.step.relation == r))
            .filter(|a| match direction {
                Direction::Out => a.step.forward,
                Direction::In => !a.step.forward,
                Direction::Both => true,
            })
            .map(|a| (a.other, a.step))
            .collect())
    }

    /// Adjacency entries of `from` that lead directly to `to`.
    fn edges_to(from: &[Adjacent], to: EntityId) -> &[Adjacent] {
        let start = from.partition_point(|a| a.other < to);
        let len = from[start..].partition_point(|a| a.other == to);
        &from[start..start + len]
    }

    fn check_endpoints(&self, user: EntityId, item: EntityId) -> Result<(), KgError> {
        if user.kind != EntityKind::User {
            return Err(KgError::WrongKind {
                expected: EntityKind::User,
                got: user,
            });
        }
        if item.kind != EntityKind::Item {
            return Err(KgError::WrongKind {
                expected: EntityKind::Item,
                got: item,
            });
        }
        for e in [user, item] {
            if !self.contains(e) {
                return Err(KgError::UnknownEntity(e));
            }
        }
        Ok(())
    }

    /// Every simple path user→mid→item, ordered by (step1, step2, mid).
    pub fn find_2hop(&self, user: EntityId, item: EntityId) -> Result<Vec<Path2>, KgError> {
        self.check_endpoints(user, item)?;
        let mut out = Vec::new();
        for first in self.adjacent(user)? {
            let mid = first.other;
            if mid == user || mid == item {
                continue;
            }
            let mid_adj = self.adjacent(mid)?;
            for last in Self::edges_to(mid_adj, item) {
                out.push(Path2 {
                    user,
                    step1: first.step,
                    mid,
                    step2: last.step,
                    item,
                });
            }
        }
        out.sort_unstable_by_key(|p| (p.step1, p.step2, p.mid));
        out.dedup();
        Ok(out)
    }

    /// Every simple path user→a→b→item, ordered by (steps, mids).
    ///
    /// Walks the user's neighbourhood two levels deep and probes the last
    /// hop through the sorted adjacency of `b`, so the cost is bounded by the
    /// size of that neighbourhood rather than the graph.
    pub fn find_3hop(&self, user: EntityId, item: EntityId) -> Result<Vec<Path3>, KgError> {
        self.check_endpoints(user, item)?;
        let mut out = Vec::new();
        for first in self.adjacent(user)? {
            let a = first.other;
            if a == user || a == item {
                continue;
            }
            for second in self.adjacent(a)? {
                let b = second.other;
                if b == user || b == item || b == a {
                    continue;
                }
                let b_adj = self.adjacent(b)?;
                for last in Self::edges_to(b_adj, item) {
                    out.push(Path3 {
                        user,
                        steps: [first.step, second.step, last.step],
                        mids: [a, b],
                        item,
                    });
                }
            }
        }
        out.sort_unstable_by_key(|p| (p.steps, p.mids));
        out.dedup();
        Ok(out)
    }

    /// Titles of the categories an item belongs to, in category id order.
    pub fn item_categories(&self, item: EntityId) -> Vec<String> {
        self.neighbors(item, Some(Relation::BelongTo), Direction::Out)
            .unwrap_or_default()
            .into_iter()
            .map(|(c, _)| self.label_or_id(c))
            .collect()
    }
}
