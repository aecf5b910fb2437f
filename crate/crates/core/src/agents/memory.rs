use serde::{Deserialize, Serialize};

use super::{AgentError, Domain};
use crate::kg::EntityId;

/// Versioned natural-language profile of one user or item agent.
///
/// `history[k]` holds version `k + 1`; the last entry is always the current text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentMemory {
    pub owner: EntityId,
    pub text: String,
    pub version: u32,
    pub history: Vec<(u32, String)>,
}

impl AgentMemory {
    pub fn new(owner: EntityId, text: String) -> Self {
        Self {
            owner,
            history: vec![(1, text.clone())],
            text,
            version: 1,
        }
    }

    /// Replaces the text wholesale and bumps the version.
    pub fn replaced(&self, text: String) -> Self {
        let mut next = self.clone();
        next.version += 1;
        next.history.push((next.version, text.clone()));
        next.text = text;
        next
    }

    /// Text as of `version`, if it exists.
    pub fn at_version(&self, version: u32) -> Option<&str> {
        self.history
            .iter()
            .find(|(v, _)| *v == version)
            .map(|(_, t)| t.as_str())
    }
}

pub fn init_user_memory(user: EntityId, domain: &Domain) -> AgentMemory {
    AgentMemory::new(
        user,
        format!("I enjoy {} {} very much.", domain.activity, domain.noun_plural),
    )
}

pub fn init_item_memory(
    item: EntityId,
    title: &str,
    categories: &[String],
    domain: &Domain,
) -> Result<AgentMemory, AgentError> {
    if title.trim().is_empty() {
        return Err(AgentError::MissingTitle(item));
    }
    let noun = &domain.noun;
    let mut text = format!("The {noun} is called “{title}”.");
    if !categories.is_empty() {
        text.push_str(&format!(
            " The category of this {noun} is: “{}”.",
            categories.join("; ")
        ));
    }
    Ok(AgentMemory::new(item, text))
}
