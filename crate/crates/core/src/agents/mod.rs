//! User and item agents: memories, prompts, and response parsing.

mod memory;
mod parse;
mod prompts;
pub mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::EntityId;

pub use memory::{init_item_memory, init_user_memory, AgentMemory};
pub use parse::{apply_memory_update, parse_choice, parse_ranking};
pub use prompts::{
    candidate_label, CandidateView, PresentedCandidate, Presentation, PromptBuilder, PromptBundle, RankingView,
};
pub use template::{TemplateError, Templates};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("item {0} has no title")]
    MissingTitle(EntityId),
    #[error("could not match a candidate in response: {0:?}")]
    UnparseableChoice(String),
    #[error("no MEMORY block in response: {0:?}")]
    UnparseableMemory(String),
    #[error("no candidate recognized in ranking response: {0:?}")]
    UnparseableRanking(String),
    #[error("ranking needs at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Domain wording used by every prompt: "CD" / "CDs" / "listening to".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub noun: String,
    pub noun_plural: String,
    pub activity: String,
}

impl Domain {
    pub fn new(noun: &str, noun_plural: &str, activity: &str) -> Self {
        Self {
            noun: noun.into(),
            noun_plural: noun_plural.into(),
            activity: activity.into(),
        }
    }

    pub fn cds() -> Self {
        Self::new("CD", "CDs", "listening to")
    }

    pub fn beauty() -> Self {
        Self::new("beauty product", "beauty products", "using")
    }

    pub fn clothing() -> Self {
        Self::new("clothing item", "clothing items", "wearing")
    }
}

impl Default for Domain {
    fn default() -> Self {
        Self::cds()
    }
}

/// Result of one autonomous interaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionOutcome {
    pub selected: EntityId,
    pub explanation: String,
    pub correct: bool,
}
