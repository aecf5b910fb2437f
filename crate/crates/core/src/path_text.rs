//! Path-to-text translation.
//!
//! 2-hop paths are grouped by their (first step, second step) relation pair
//! and each group becomes one sentence listing the intermediate labels.
//! 3-hop paths are reduced to their descriptive labels (features and
//! categories), de-duplicated, and filtered through the user's
//! non-informative set: labels that show up on 3-hop paths towards both the
//! user's positive and negative training items do not discriminate between
//! them and are dropped.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{get_desc, DirectedStep, EntityId, KgError, KnowledgeGraph, Path2, Relation};
use crate::simulation::TrainingSample;
use crate::text::{quote_space, word_count};

/// Tokens a raw 2-hop path costs when pasted verbatim: r1, mid, r2.
pub const ORIGINAL_WORDS_PER_2HOP_PATH: usize = 3;
/// Tokens a raw 3-hop path costs when pasted verbatim: r1, e1, r2, e2, r3.
pub const ORIGINAL_WORDS_PER_3HOP_PATH: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathTextError {
    #[error(transparent)]
    Graph(#[from] KgError),
    #[error("word-count report needs at least one (user, item) pair")]
    EmptyInput,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathSource {
    TwoHop,
    ThreeHop,
}

/// 2-hop paths sharing a relation pair, merged into one label list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationPairGroup {
    pub first: DirectedStep,
    pub second: DirectedStep,
    pub mids: Vec<String>,
}

impl RelationPairGroup {
    fn render(&self, subject: &str, object: &str) -> String {
        format!(
            "{subject} {} {}, which are {} by {object}.",
            user_phrase(self.first),
            quote_space(&self.mids),
            item_phrase(self.second)
        )
    }
}

/// Phrase for the user's side of a 2-hop path ("The user {phrase} ...").
pub fn user_phrase(step: DirectedStep) -> &'static str {
    match step.relation {
        Relation::Purchase => "purchased",
        Relation::Mention => "mentions",
        Relation::DescribeAs => "describes",
        Relation::BelongTo => "belongs to",
        Relation::ProducedBy => "produced by",
        Relation::AlsoBought => "also bought with",
        Relation::AlsoViewed => "also viewed with",
        Relation::BoughtTogether => "bought together with",
    }
}

/// Phrase for the item's side ("..., which are {phrase} by the item.").
pub fn item_phrase(step: DirectedStep) -> &'static str {
    match step.relation {
        Relation::Purchase => "purchased",
        Relation::Mention => "mentioned",
        Relation::DescribeAs => "described",
        Relation::BelongTo => "belongs to",
        Relation::ProducedBy => "produced by",
        Relation::AlsoBought => "also bought with",
        Relation::AlsoViewed => "also viewed with",
        Relation::BoughtTogether => "bought together with",
    }
}

/// Translated text for one (user, item) pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathText {
    pub source: PathSource,
    pub sentences: Vec<String>,
    /// 2-hop only: the merged relation-pair groups behind `sentences`.
    pub groups: Vec<RelationPairGroup>,
    /// 3-hop only: the surviving descriptive labels.
    pub labels: Vec<String>,
    /// Whitespace tokens of the rendered sentences.
    pub word_count: usize,
}

impl PathText {
    pub fn empty(source: PathSource) -> Self {
        Self {
            source,
            sentences: Vec::new(),
            groups: Vec::new(),
            labels: Vec::new(),
            word_count: 0,
        }
    }

    fn from_groups(groups: Vec<RelationPairGroup>) -> Self {
        let sentences: Vec<String> = groups.iter().map(|g| g.render("The user", "the item")).collect();
        let word_count = sentences.iter().map(|s| word_count(s)).sum();
        Self {
            source: PathSource::TwoHop,
            sentences,
            groups,
            labels: Vec::new(),
            word_count,
        }
    }

    fn from_labels(labels: Vec<String>) -> Self {
        if labels.is_empty() {
            return Self::empty(PathSource::ThreeHop);
        }
        let sentence = format!(
            "The user is connected to the item through these features: {}.",
            quote_space(&labels)
        );
        Self {
            source: PathSource::ThreeHop,
            word_count: word_count(&sentence),
            sentences: vec![sentence],
            groups: Vec::new(),
            labels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    /// Every label this text mentions, in rendering order.
    pub fn all_labels(&self) -> Vec<String> {
        match self.source {
            PathSource::TwoHop => self.groups.iter().flat_map(|g| g.mids.iter().cloned()).collect(),
            PathSource::ThreeHop => self.labels.clone(),
        }
    }

    /// Content size without sentence scaffolding: one token per relation and
    /// one per label for 2-hop groups, one per label for 3-hop text. This is
    /// the unit the reduction report compares against raw path listings.
    pub fn compact_word_count(&self) -> usize {
        match self.source {
            PathSource::TwoHop => self.groups.iter().map(|g| 2 + g.mids.len()).sum(),
            PathSource::ThreeHop => self.labels.len(),
        }
    }

    /// The 2-hop sentences addressed to the user agent, e.g.
    /// `You mentions 'seat' 'garden', which are described by this CD.`
    pub fn second_person(&self, noun: &str) -> String {
        let object = format!("this {noun}");
        self.groups
            .iter()
            .map(|g| g.render("You", &object))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Groups 2-hop paths by relation pair, keeping first-seen label order and
/// dropping repeated labels within a group.
pub fn group_2hop(graph: &KnowledgeGraph, paths: &[Path2]) -> Vec<RelationPairGroup> {
    let mut groups: BTreeMap<(DirectedStep, DirectedStep), Vec<String>> = BTreeMap::new();
    for p in paths {
        let mids = groups.entry((p.step1, p.step2)).or_default();
        let label = graph.label_or_id(p.mid);
        if !mids.contains(&label) {
            mids.push(label);
        }
    }
    groups
        .into_iter()
        .map(|((first, second), mids)| RelationPairGroup { first, second, mids })
        .collect()
}

/// 2-hop translation: one sentence per relation pair.
pub fn trans_2hop(graph: &KnowledgeGraph, user: EntityId, item: EntityId) -> Result<PathText, PathTextError> {
    let paths = graph.find_2hop(user, item)?;
    if paths.is_empty() {
        return Ok(PathText::empty(PathSource::TwoHop));
    }
    Ok(PathText::from_groups(group_2hop(graph, &paths)))
}

/// Descriptive labels that are common to the user's positive and negative
/// training items, and therefore carry no preference signal.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonInformativeSet {
    pub user: Option<EntityId>,
    pub entities: BTreeSet<String>,
}

impl NonInformativeSet {
    pub fn empty(user: EntityId) -> Self {
        Self {
            user: Some(user),
            entities: BTreeSet::new(),
        }
    }

    pub fn contains(&self, label: &str) -> bool {
        self.entities.contains(label)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// Ordered, de-duplicated descriptive labels over all 3-hop paths of a pair.
pub fn descriptive_labels(graph: &KnowledgeGraph, user: EntityId, item: EntityId) -> Result<Vec<String>, KgError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for path in graph.find_3hop(user, item)? {
        for e in get_desc(&path) {
            let label = graph.label_or_id(e);
            if seen.insert(label.clone()) {
                out.push(label);
            }
        }
    }
    Ok(out)
}

/// S_u = E+ ∩ E−, over every training sample of the user.
pub fn build_noninformative_set(
    graph: &KnowledgeGraph,
    user: EntityId,
    samples: &[TrainingSample],
) -> Result<NonInformativeSet, PathTextError> {
    let mut positive = BTreeSet::new();
    let mut negative = BTreeSet::new();
    for s in samples {
        positive.extend(descriptive_labels(graph, user, s.positive)?);
        negative.extend(descriptive_labels(graph, user, s.negative)?);
    }
    Ok(NonInformativeSet {
        user: Some(user),
        entities: positive.intersection(&negative).cloned().collect(),
    })
}

/// 3-hop translation: descriptive labels minus the non-informative set.
pub fn trans_3hop(
    graph: &KnowledgeGraph,
    user: EntityId,
    item: EntityId,
    s_u: &NonInformativeSet,
) -> Result<PathText, PathTextError> {
    let labels = descriptive_labels(graph, user, item)?
        .into_iter()
        .filter(|l| !s_u.contains(l))
        .collect();
    Ok(PathText::from_labels(labels))
}

/// Table-style averages for one hop length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopWordStats {
    /// Pairs with at least one path of this length; the averages below are over these.
    pub pairs_with_paths: usize,
    pub avg_paths: f64,
    pub avg_original_words: f64,
    pub avg_words: f64,
    /// Whitespace tokens of the full rendered sentences, for reference.
    pub avg_rendered_words: f64,
    pub reduction_percentage: f64,
}

impl HopWordStats {
    fn from_rows(rows: &[(usize, usize, usize, usize)]) -> Self {
        let n = rows.len();
        if n == 0 {
            return Self {
                pairs_with_paths: 0,
                avg_paths: 0.0,
                avg_original_words: 0.0,
                avg_words: 0.0,
                avg_rendered_words: 0.0,
                reduction_percentage: 0.0,
            };
        }
        let avg = |f: fn(&(usize, usize, usize, usize)) -> usize| rows.iter().map(f).sum::<usize>() as f64 / n as f64;
        let avg_paths = avg(|r| r.0);
        let avg_original_words = avg(|r| r.1);
        let avg_words = avg(|r| r.2);
        let avg_rendered_words = avg(|r| r.3);
        Self {
            pairs_with_paths: n,
            avg_paths,
            avg_original_words,
            avg_words,
            avg_rendered_words,
            reduction_percentage: reduction_percentage(avg_words, avg_original_words),
        }
    }
}

/// `(1 - translated / original) * 100`, or 0 when there is nothing to reduce.
pub fn reduction_percentage(translated: f64, original: f64) -> f64 {
    if original <= 0.0 {
        0.0
    } else {
        (1.0 - translated / original) * 100.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub pairs: usize,
    pub two_hop: HopWordStats,
    pub three_hop: HopWordStats,
}

/// Word-count accounting over a list of (user, item) pairs. Pairs with no
/// path of a given length are left out of that length's averages.
/// `filters` supplies each user's non-informative set; users without one
/// are translated unfiltered.
pub fn word_count_report(
    graph: &KnowledgeGraph,
    pairs: &[(EntityId, EntityId)],
    filters: &BTreeMap<EntityId, NonInformativeSet>,
) -> Result<ReductionReport, PathTextError> {
    if pairs.is_empty() {
        return Err(PathTextError::EmptyInput);
    }
    let mut two = Vec::new();
    let mut three = Vec::new();
    for &(user, item) in pairs {
        let p2 = graph.find_2hop(user, item)?;
        if !p2.is_empty() {
            let t = PathText::from_groups(group_2hop(graph, &p2));
            two.push((
                p2.len(),
                p2.len() * ORIGINAL_WORDS_PER_2HOP_PATH,
                t.compact_word_count(),
                t.word_count,
            ));
        }
        let p3 = graph.find_3hop(user, item)?.len();
        if p3 > 0 {
            let empty = NonInformativeSet::empty(user);
            let s_u = filters.get(&user).unwrap_or(&empty);
            let t = trans_3hop(graph, user, item, s_u)?;
            three.push((
                p3,
                p3 * ORIGINAL_WORDS_PER_3HOP_PATH,
                t.compact_word_count(),
                t.word_count,
            ));
        }
    }
    Ok(ReductionReport {
        pairs: pairs.len(),
        two_hop: HopWordStats::from_rows(&two),
        three_hop: HopWordStats::from_rows(&three),
    })
}
