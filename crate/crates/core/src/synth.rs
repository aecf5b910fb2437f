//! Seeded synthetic datasets.
//!
//! [`planted`] wires a handful of preferred features per user into the graph
//! so that a recommender reading KG paths can find the held-out item, while
//! titles and categories carry no signal. [`density`] produces a corpus whose
//! per-interaction 2-hop and 3-hop path counts sit near configurable targets.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::Domain;
use crate::ingest::{Dataset, DatasetManifest, DeclaredCounts, UserHistory};
use crate::kg::{EntityId, EntityKind, KnowledgeGraph, Relation, Triple};
use crate::rng::stream;

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

/// Unique pseudo-words, so no label shares a token with another by accident.
struct Namer {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl Namer {
    fn new(seed: u64, purpose: &str) -> Self {
        Self {
            rng: stream(seed, "synth-names", purpose),
            used: BTreeSet::new(),
        }
    }

    fn word(&mut self) -> String {
        loop {
            let syllables = self.rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS[self.rng.random_range(0..ONSETS.len())]);
                w.push_str(VOWELS[self.rng.random_range(0..VOWELS.len())]);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn title(&mut self) -> String {
        let mut a = self.word();
        let b = self.word();
        a[..1].make_ascii_uppercase();
        format!("{a} {b}")
    }
}

fn pick(rng: &mut ChaCha8Rng, pool: &[EntityId], n: usize) -> Vec<EntityId> {
    let mut idx: Vec<usize> = sample(rng, pool.len(), n.min(pool.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|k| pool[k]).collect()
}

fn link(g: &mut KnowledgeGraph, head: EntityId, relation: Relation, tail: EntityId) {
    g.add_triple(Triple::new(head, relation, tail))
        .expect("generator only emits well-typed triples");
}

fn entity(g: &mut KnowledgeGraph, kind: EntityKind, label: &str) -> EntityId {
    g.add_entity(kind, label).expect("generated labels are unique and non-empty")
}

fn finish(name: &str, graph: KnowledgeGraph, mut histories: Vec<UserHistory>) -> Dataset {
    histories.sort_by_key(|h| h.user);
    let interactions = histories.iter().map(|h| h.items.len()).sum();
    Dataset {
        manifest: DatasetManifest {
            name: name.to_string(),
            domain: Domain::cds(),
            entities: "entities.tsv".into(),
            triples: "triples.tsv".into(),
            interactions: "interactions.tsv".into(),
            counts: DeclaredCounts {
                entities: Some(graph.entity_count()),
                triples: Some(graph.triple_count()),
                interactions: Some(interactions),
            },
        },
        graph,
        histories,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub seed: u64,
    pub users: usize,
    /// Preferred features each user mentions.
    pub planted: usize,
    /// Items bought per user, the last one being held out.
    pub items_per_user: usize,
    /// Planted features describing each of a user's items.
    pub features_per_item: usize,
    /// Shared features nobody mentions; one describes every item.
    pub noise_features: usize,
    pub categories: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            users: 50,
            planted: 5,
            items_per_user: 5,
            features_per_item: 3,
            noise_features: 10,
            categories: 8,
        }
    }
}

/// Every user owns disjoint items and planted features; categories are
/// drawn uniformly and titles are random pseudo-words.
pub fn planted(cfg: &PlantedConfig) -> Dataset {
    let mut names = Namer::new(cfg.seed, "planted");
    let mut rng = stream(cfg.seed, "synth-planted", "wiring");
    let mut g = KnowledgeGraph::new();
    let noise: Vec<EntityId> = (0..cfg.noise_features)
        .map(|_| entity(&mut g, EntityKind::Feature, &names.word()))
        .collect();
    let cats: Vec<EntityId> = (0..cfg.categories.max(1))
        .map(|_| entity(&mut g, EntityKind::Category, &names.word()))
        .collect();
    let mut histories = Vec::new();
    for _ in 0..cfg.users {
        let u = entity(&mut g, EntityKind::User, "");
        let planted: Vec<EntityId> = (0..cfg.planted)
            .map(|_| entity(&mut g, EntityKind::Feature, &names.word()))
            .collect();
        for &f in &planted {
            link(&mut g, u, Relation::Mention, f);
        }
        let mut items = Vec::new();
        for _ in 0..cfg.items_per_user {
            let i = entity(&mut g, EntityKind::Item, &names.title());
            for f in pick(&mut rng, &planted, cfg.features_per_item) {
                link(&mut g, i, Relation::DescribeAs, f);
            }
            if !noise.is_empty() {
                link(&mut g, i, Relation::DescribeAs, noise[rng.random_range(0..noise.len())]);
            }
            link(&mut g, i, Relation::BelongTo, cats[rng.random_range(0..cats.len())]);
            link(&mut g, u, Relation::Purchase, i);
            items.push(i);
        }
        histories.push(UserHistory { user: u, items });
    }
    finish("planted", g, histories)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityConfig {
    pub seed: u64,
    pub users: usize,
    pub items: usize,
    pub features: usize,
    pub categories: usize,
    pub brands: usize,
    pub history: usize,
    pub mentions_per_user: usize,
    pub features_per_item: usize,
    /// Outgoing also_bought links per item.
    pub co_purchases: usize,
}

impl Default for DensityConfig {
    /// Tuned for roughly 13.6 two-hop and 350 three-hop paths per purchase.
    fn default() -> Self {
        Self {
            seed: 11,
            users: 200,
            items: 400,
            features: 80,
            categories: 12,
            brands: 40,
            history: 10,
            mentions_per_user: 27,
            features_per_item: 40,
            co_purchases: 3,
        }
    }
}

/// Uniformly wired corpus; see [`DensityConfig`].
pub fn density(cfg: &DensityConfig) -> Dataset {
    let mut names = Namer::new(cfg.seed, "density");
    let mut rng = stream(cfg.seed, "synth-density", "wiring");
    let mut g = KnowledgeGraph::new();
    let features: Vec<EntityId> = (0..cfg.features)
        .map(|_| entity(&mut g, EntityKind::Feature, &names.word()))
        .collect();
    let cats: Vec<EntityId> = (0..cfg.categories.max(1))
        .map(|_| entity(&mut g, EntityKind::Category, &names.word()))
        .collect();
    let brands: Vec<EntityId> = (0..cfg.brands.max(1))
        .map(|_| entity(&mut g, EntityKind::Brand, &names.word()))
        .collect();
    let items: Vec<EntityId> = (0..cfg.items)
        .map(|_| entity(&mut g, EntityKind::Item, &names.title()))
        .collect();
    for &i in &items {
        for f in pick(&mut rng, &features, cfg.features_per_item) {
            link(&mut g, i, Relation::DescribeAs, f);
        }
        link(&mut g, i, Relation::BelongTo, cats[rng.random_range(0..cats.len())]);
        link(&mut g, i, Relation::ProducedBy, brands[rng.random_range(0..brands.len())]);
        for j in pick(&mut rng, &items, cfg.co_purchases + 1) {
            if j != i {
                link(&mut g, i, Relation::AlsoBought, j);
            }
        }
    }
    let mut histories = Vec::new();
    for _ in 0..cfg.users {
        let u = entity(&mut g, EntityKind::User, "");
        for f in pick(&mut rng, &features, cfg.mentions_per_user) {
            link(&mut g, u, Relation::Mention, f);
        }
        let mut bought = pick(&mut rng, &items, cfg.history);
        // chronological order is a seeded permutation
        for k in (1..bought.len()).rev() {
            bought.swap(k, rng.random_range(0..=k));
        }
        for &i in &bought {
            link(&mut g, u, Relation::Purchase, i);
        }
        histories.push(UserHistory { user: u, items: bought });
    }
    finish("density", g, histories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::dataset_stats;
    use crate::kg::Direction;
    use crate::path_text::word_count_report;

    #[test]
    fn planted_shape() {
        let d = planted(&PlantedConfig::default());
        assert_eq!(d.histories.len(), 50);
        let g = &d.graph;
        for h in &d.histories {
            assert_eq!(h.items.len(), 5);
            let mentioned: BTreeSet<EntityId> = g
                .neighbors(h.user, Some(Relation::Mention), Direction::Out)
                .unwrap()
                .into_iter()
                .map(|(e, _)| e)
                .collect();
            assert_eq!(mentioned.len(), 5);
            for &i in &h.items {
                let paths = g.find_2hop(h.user, i).unwrap();
                let via: BTreeSet<EntityId> = paths.iter().map(|p| p.mid).collect();
                assert_eq!(via.len(), 3);
                assert!(via.is_subset(&mentioned));
            }
        }
        assert_eq!(planted(&PlantedConfig::default()).graph.triples().count(), g.triple_count());
    }

    #[test]
    fn density_hits_targets() {
        let d = density(&DensityConfig::default());
        let s = dataset_stats(&d, 300).unwrap();
        assert!((s.avg_2hop - 13.6).abs() <= 0.3 * 13.6, "2-hop {}", s.avg_2hop);
        assert!((s.avg_3hop - 350.0).abs() <= 0.3 * 350.0, "3-hop {}", s.avg_3hop);
        let pairs: Vec<_> = d
            .histories
            .iter()
            .flat_map(|h| h.items.iter().map(move |&i| (h.user, i)))
            .take(300)
            .collect();
        let r = word_count_report(&d.graph, &pairs, &Default::default()).unwrap();
        assert!((55.0..=70.0).contains(&r.two_hop.reduction_percentage));
        assert!(r.three_hop.reduction_percentage >= 90.0);
    }
}
