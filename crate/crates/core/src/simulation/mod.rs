//! Training-phase simulation.
//!
//! Each user replays their training interactions in order. At every step
//! the user agent chooses between the next real interaction and a
//! popularity-sampled negative, then reflects on the outcome; both item
//! agents reflect too. Users never share state, so they can run in
//! parallel and their results do not depend on scheduling.

mod checkpoint;
mod runner;

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, TemplateError};
use crate::kg::{EntityId, KgError};
use crate::llm::LlmError;
use crate::path_text::PathTextError;

pub use checkpoint::{read_checkpoint, write_json_atomic};
pub(crate) use runner::ask_with_retry;
pub use runner::{Simulator, StepRecord, StepStatus, UserState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] KgError),
    #[error(transparent)]
    PathText(#[from] PathTextError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("no negative item available for {0}")]
    NoNegativeAvailable(EntityId),
    #[error("checkpoint {path} was written by a different configuration")]
    CheckpointMismatch { path: String },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Json(#[from] serde_json::Error),
}

/// A user's chronological interactions split into training items and the
/// held-out last one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user: EntityId,
    pub train: Vec<EntityId>,
    pub test: EntityId,
}

impl UserSplit {
    pub fn all_items(&self) -> BTreeSet<EntityId> {
        self.train.iter().copied().chain([self.test]).collect()
    }
}

/// One (positive, negative) pair the user agent is trained on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub user: EntityId,
    pub positive: EntityId,
    pub negative: EntityId,
    pub step_index: usize,
}

/// Interaction counts used for negative sampling and the popularity baseline.
#[derive(Clone, Debug)]
pub struct Popularity {
    items: Vec<EntityId>,
    counts: Vec<u64>,
    index: BTreeMap<EntityId, usize>,
    dist: Option<WeightedIndex<u64>>,
}

impl Popularity {
    pub fn from_counts(counts: &BTreeMap<EntityId, u64>) -> Self {
        let items: Vec<EntityId> = counts.keys().copied().collect();
        let weights: Vec<u64> = counts.values().copied().collect();
        let index = items.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let dist = WeightedIndex::new(&weights).ok();
        Self {
            items,
            counts: weights,
            index,
            dist,
        }
    }

    pub fn from_interactions<'a>(items: impl IntoIterator<Item = &'a EntityId>) -> Self {
        let mut counts = BTreeMap::new();
        for &i in items {
            *counts.entry(i).or_insert(0u64) += 1;
        }
        Self::from_counts(&counts)
    }

    pub fn count(&self, item: EntityId) -> u64 {
        self.index.get(&item).map_or(0, |&k| self.counts[k])
    }

    /// Every item with a recorded count, in id order.
    pub fn items(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.items.iter().copied()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Draws an item with probability proportional to its count, skipping
    /// `exclude`. Items with a zero count are never drawn.
    pub fn sample_negative<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        user: EntityId,
        exclude: &BTreeSet<EntityId>,
    ) -> Result<EntityId, SimError> {
        let dist = self.dist.as_ref().ok_or(SimError::NoNegativeAvailable(user))?;
        let excluded: u64 = exclude.iter().map(|&i| self.count(i)).sum();
        if excluded >= self.total() {
            return Err(SimError::NoNegativeAvailable(user));
        }
        loop {
            let item = self.items[dist.sample(rng)];
            if !exclude.contains(&item) {
                return Ok(item);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub kg_enabled: bool,
    /// Abort a user after this many skipped steps in a row.
    pub max_consecutive_failures: usize,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    /// Stop each user once this many steps are done, leaving it resumable.
    pub stop_after: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            kg_enabled: true,
            max_consecutive_failures: 3,
            checkpoint_every: 1,
            stop_after: None,
        }
    }
}
