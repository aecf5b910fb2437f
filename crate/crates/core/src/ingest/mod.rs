//! Dataset loading, dense user sampling and the leave-last-out split.
//!
//! A dataset is three tab-separated files described by a JSON manifest:
//!
//! ```text
//! entities.tsv      id  type  label        type ∈ user|item|feature|brand|category
//! triples.tsv       head_id  relation  tail_id
//! interactions.tsv  user_id  item_id  order_index
//! ```
//!
//! A header row is optional, blank lines and `#` comments are skipped.
//! Input ids are arbitrary strings; entities get local ids per type in order
//! of appearance, and canonical files written back use `kind:N` ids.

mod tsv;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::Domain;
use crate::kg::{EntityId, EntityKind, KgError, KnowledgeGraph, Relation};
use crate::rng::stream;
use crate::simulation::UserSplit;

pub use tsv::{load_dataset, write_canonical};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}:{line}: unknown entity `{id}`")]
    OrphanReference { file: String, line: usize, id: String },
    #[error("{file}:{line}: {source}")]
    Graph {
        file: String,
        line: usize,
        #[source]
        source: KgError,
    },
    #[error("{file}:{line}: purchase of {item} by {user} has no interaction record")]
    UnsyncedPurchase {
        file: String,
        line: usize,
        user: String,
        item: String,
    },
    #[error("manifest declares {declared} {what} but {loaded} were loaded")]
    CountMismatch { what: String, declared: usize, loaded: usize },
    #[error("asked for {requested} users but only {available} have at least 2 interactions")]
    NotEnoughUsers { requested: usize, available: usize },
    #[error("{user} has {len} interaction(s); at least 2 are needed")]
    HistoryTooShort { user: EntityId, len: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeclaredCounts {
    pub entities: Option<usize>,
    pub triples: Option<usize>,
    pub interactions: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(default)]
    pub domain: Domain,
    /// Relative paths resolve against the manifest's directory.
    pub entities: PathBuf,
    pub triples: PathBuf,
    pub interactions: PathBuf,
    #[serde(default)]
    pub counts: DeclaredCounts,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| IngestError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut m.entities, &mut m.triples, &mut m.interactions] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }
}

/// One user's items in chronological order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user: EntityId,
    pub items: Vec<EntityId>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub graph: KnowledgeGraph,
    /// Sorted by user id.
    pub histories: Vec<UserHistory>,
}

impl Dataset {
    pub fn interaction_count(&self) -> usize {
        self.histories.iter().map(|h| h.items.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Highest interaction counts first, ties shuffled by seed.
    #[default]
    Dense,
    Uniform,
}

impl std::str::FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(SamplingStrategy::Dense),
            "uniform" => Ok(SamplingStrategy::Uniform),
            other => Err(format!("unknown sampling strategy `{other}` (expected dense or uniform)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledSubset {
    pub seed: u64,
    pub strategy: SamplingStrategy,
    /// Sorted by user id.
    pub histories: Vec<UserHistory>,
    pub items: BTreeSet<EntityId>,
}

impl SampledSubset {
    pub fn users(&self) -> Vec<EntityId> {
        self.histories.iter().map(|h| h.user).collect()
    }
}

/// Picks `n_users` among users with at least two interactions.
pub fn sample_users(
    histories: &[UserHistory],
    n_users: usize,
    seed: u64,
    strategy: SamplingStrategy,
) -> Result<SampledSubset, IngestError> {
    let mut eligible: Vec<&UserHistory> = histories.iter().filter(|h| h.items.len() >= 2).collect();
    if n_users > eligible.len() {
        return Err(IngestError::NotEnoughUsers {
            requested: n_users,
            available: eligible.len(),
        });
    }
    eligible.sort_by_key(|h| h.user);
    eligible.shuffle(&mut stream(seed, "sample-users", strategy_key(strategy)));
    if strategy == SamplingStrategy::Dense {
        // stable, so equal counts keep their shuffled order
        eligible.sort_by(|a, b| b.items.len().cmp(&a.items.len()));
    }
    let mut chosen: Vec<UserHistory> = eligible.into_iter().take(n_users).cloned().collect();
    chosen.sort_by_key(|h| h.user);
    let items = chosen.iter().flat_map(|h| h.items.iter().copied()).collect();
    Ok(SampledSubset {
        seed,
        strategy,
        histories: chosen,
        items,
    })
}

fn strategy_key(s: SamplingStrategy) -> &'static str {
    match s {
        SamplingStrategy::Dense => "dense",
        SamplingStrategy::Uniform => "uniform",
    }
}

pub fn sample_dense_subset(histories: &[UserHistory], n_users: usize, seed: u64) -> Result<SampledSubset, IngestError> {
    sample_users(histories, n_users, seed, SamplingStrategy::Dense)
}

pub fn split_leave_last_out(histories: &[UserHistory]) -> Result<Vec<UserSplit>, IngestError> {
    histories
        .iter()
        .map(|h| match h.items.split_last() {
            Some((&test, train)) if !train.is_empty() => Ok(UserSplit {
                user: h.user,
                train: train.to_vec(),
                test,
            }),
            _ => Err(IngestError::HistoryTooShort {
                user: h.user,
                len: h.items.len(),
            }),
        })
        .collect()
}

/// Copy of `graph` without the purchase edges of held-out items.
pub fn training_graph(graph: &KnowledgeGraph, splits: &[UserSplit]) -> KnowledgeGraph {
    let mut g = graph.clone();
    for s in splits {
        g.remove_triple(&crate::kg::Triple::new(s.user, Relation::Purchase, s.test));
    }
    g
}

/// Entity and relation counts plus average path densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub entities: BTreeMap<String, usize>,
    pub relations: BTreeMap<String, usize>,
    pub users_with_history: usize,
    pub interactions: usize,
    /// (user, item) interaction pairs the averages were taken over.
    pub sampled_pairs: usize,
    pub avg_2hop: f64,
    pub avg_3hop: f64,
}

/// Path densities are averaged over up to `max_pairs` interactions, taken
/// in user order.
pub fn dataset_stats(dataset: &Dataset, max_pairs: usize) -> Result<DatasetStats, KgError> {
    let g = &dataset.graph;
    let mut entities = BTreeMap::new();
    for kind in EntityKind::ALL {
        entities.insert(kind.as_str().to_string(), g.entities_of(kind).len());
    }
    let mut relations: BTreeMap<String, usize> = Relation::ALL.iter().map(|r| (r.as_str().to_string(), 0)).collect();
    for t in g.triples() {
        *relations.get_mut(t.relation.as_str()).unwrap() += 1;
    }
    let pairs: Vec<(EntityId, EntityId)> = dataset
        .histories
        .iter()
        .flat_map(|h| h.items.iter().map(move |&i| (h.user, i)))
        .take(max_pairs)
        .collect();
    let (mut two, mut three) = (0usize, 0usize);
    for &(u, i) in &pairs {
        two += g.find_2hop(u, i)?.len();
        three += g.find_3hop(u, i)?.len();
    }
    let n = pairs.len().max(1) as f64;
    Ok(DatasetStats {
        name: dataset.manifest.name.clone(),
        entities,
        relations,
        users_with_history: dataset.histories.len(),
        interactions: dataset.interaction_count(),
        sampled_pairs: pairs.len(),
        avg_2hop: two as f64 / n,
        avg_3hop: three as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(user: u32, n: u32) -> UserHistory {
        UserHistory {
            user: EntityId::user(user),
            items: (0..n).map(EntityId::item).collect(),
        }
    }

    #[test]
    fn dense_sampling_prefers_long_histories() {
        let hs = vec![hist(0, 10), hist(1, 8), hist(2, 8), hist(3, 3), hist(4, 2)];
        let mut seen_tie = BTreeSet::new();
        for seed in 0..20 {
            let s = sample_dense_subset(&hs, 2, seed).unwrap();
            let users = s.users();
            assert!(users.contains(&EntityId::user(0)));
            let other = *users.iter().find(|&&u| u != EntityId::user(0)).unwrap();
            assert!(other == EntityId::user(1) || other == EntityId::user(2));
            seen_tie.insert(other);
            assert_eq!(s, sample_dense_subset(&hs, 2, seed).unwrap());
        }
        assert_eq!(seen_tie.len(), 2, "seed should break the tie both ways");
    }

    #[test]
    fn not_enough_users() {
        let hs = vec![hist(0, 3), hist(1, 1)];
        assert!(matches!(
            sample_dense_subset(&hs, 2, 0),
            Err(IngestError::NotEnoughUsers {
                requested: 2,
                available: 1
            })
        ));
        assert_eq!(sample_users(&hs, 1, 0, SamplingStrategy::Uniform).unwrap().users(), [EntityId::user(0)]);
    }

    #[test]
    fn leave_last_out() {
        let s = split_leave_last_out(&[hist(0, 3)]).unwrap();
        assert_eq!(s[0].train, [EntityId::item(0), EntityId::item(1)]);
        assert_eq!(s[0].test, EntityId::item(2));
        assert!(matches!(
            split_leave_last_out(&[hist(1, 1)]),
            Err(IngestError::HistoryTooShort { len: 1, .. })
        ));
    }
}
