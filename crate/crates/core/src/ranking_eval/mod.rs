//! Ranking stage, NDCG@K scoring and the popularity / BM25 baselines.

mod agent;
mod bm25;
mod report;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentError;
use crate::kg::EntityId;
use crate::path_text::PathTextError;
use crate::simulation::{Popularity, SimError, UserSplit};

pub use agent::{EvalConfig, EvalUser, Evaluator};
pub use bm25::{baseline_bm25, Bm25};
pub use report::{aggregate, EvalReport, MeanStd, MethodRow, RankRecord};

pub const CUTOFFS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground truth {0} is not in the ranked list")]
    GroundTruthMissing(EntityId),
    #[error("ranked list for {user} is not a permutation of its candidates")]
    NotAPermutation { user: EntityId },
    #[error("{user} needs {needed} negatives but only {available} items are eligible")]
    InsufficientItems {
        user: EntityId,
        needed: usize,
        available: usize,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    PathText(#[from] PathTextError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Agent,
    Pop,
    Bm25,
    Random,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Agent => "agent",
            Method::Pop => "pop",
            Method::Bm25 => "bm25",
            Method::Random => "random",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "agent" => Ok(Method::Agent),
            "pop" => Ok(Method::Pop),
            "bm25" => Ok(Method::Bm25),
            "random" => Ok(Method::Random),
            other => Err(format!("unknown method `{other}` (expected agent, pop, bm25 or random)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user: EntityId,
    pub ground_truth: EntityId,
    pub negatives: Vec<EntityId>,
    /// All candidates in a seeded order.
    pub presentation: Vec<EntityId>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.negatives.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Presentation order for one evaluation repeat.
    pub fn shuffled<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<EntityId> {
        let mut order = self.presentation.clone();
        order.shuffle(rng);
        order
    }

    pub fn check_permutation(&self, ranked: &[EntityId]) -> Result<(), EvalError> {
        let want: BTreeSet<EntityId> = self.presentation.iter().copied().collect();
        let got: BTreeSet<EntityId> = ranked.iter().copied().collect();
        if ranked.len() != self.presentation.len() || want != got {
            return Err(EvalError::NotAPermutation { user: self.user });
        }
        Ok(())
    }
}

/// Ground truth plus `size - 1` distinct popularity-weighted negatives from
/// outside the user's history, shuffled.
pub fn build_candidates<R: Rng + ?Sized>(
    split: &UserSplit,
    popularity: &Popularity,
    rng: &mut R,
    size: usize,
) -> Result<CandidateSet, EvalError> {
    let needed = size.saturating_sub(1);
    let mut exclude = split.all_items();
    let available = popularity_support(popularity)
        .into_iter()
        .filter(|i| !exclude.contains(i))
        .count();
    if available < needed {
        return Err(EvalError::InsufficientItems {
            user: split.user,
            needed,
            available,
        });
    }
    let mut negatives = Vec::with_capacity(needed);
    while negatives.len() < needed {
        let n = popularity.sample_negative(rng, split.user, &exclude)?;
        exclude.insert(n);
        negatives.push(n);
    }
    let mut presentation: Vec<EntityId> = std::iter::once(split.test).chain(negatives.iter().copied()).collect();
    presentation.shuffle(rng);
    Ok(CandidateSet {
        user: split.user,
        ground_truth: split.test,
        negatives,
        presentation,
    })
}

fn popularity_support(p: &Popularity) -> Vec<EntityId> {
    p.items().filter(|&i| p.count(i) > 0).collect()
}

/// NDCG@k with one relevant item: `1 / log2(rank + 1)` if rank ≤ k, else 0.
pub fn ndcg_at_k(ranked: &[EntityId], ground_truth: EntityId, k: usize) -> Result<f64, EvalError> {
    let pos = ranked
        .iter()
        .position(|&i| i == ground_truth)
        .ok_or(EvalError::GroundTruthMissing(ground_truth))?;
    let rank = pos + 1;
    Ok(if rank <= k { 1.0 / ((rank + 1) as f64).log2() } else { 0.0 })
}

/// Descending count, ties by id.
pub fn baseline_pop(candidates: &[EntityId], popularity: &Popularity) -> Vec<EntityId> {
    let mut out = candidates.to_vec();
    out.sort_by(|a, b| popularity.count(*b).cmp(&popularity.count(*a)).then(a.cmp(b)));
    out
}
