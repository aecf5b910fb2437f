//! Lenient readers for agent responses.
//!
//! The prompts ask for `CHOICE:` / `EXPLANATION:` / `MEMORY:` / `RANKING:`
//! lines, but free-form replies in the older "Chosen CD: ..." and
//! "My updated self-introduction: ..." styles are accepted too.

use std::sync::LazyLock;

use regex::Regex;

use super::prompts::PresentedCandidate;
use super::{AgentError, AgentMemory, InteractionOutcome};
use crate::kg::EntityId;
use crate::text::normalize;

static CHOICE_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?im)^\s*\**\s*choice\s*\**\s*:\s*(.*)$").unwrap());
static LEGACY_CHOICE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^\s*\**\s*(?:chosen|selected)\b[^:\n]*:\s*(.*)$").unwrap());
static EXPLANATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)explanation\s*\**\s*:").unwrap());
static MEMORY_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^\s*\**\s*MEMORY\s*\**\s*:").unwrap());
static MEMORY_FALLBACK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)my updated (?:self-introduction|description)\s*:").unwrap());
static RANKING_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?im)^\s*\**\s*ranking\s*\**\s*:\s*(.*)$").unwrap());
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());

fn strip_decoration(s: &str) -> &str {
    s.trim()
        .trim_matches(|c: char| c.is_whitespace() || "\"'“”‘’[]*().,;:".contains(c))
}

/// Word-boundary containment over normalized text.
fn contains_phrase(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let padded = format!(" {haystack} ");
    padded.find(&format!(" {needle} "))
}

/// Reads the agent's pick between the presented candidates. Matching tries,
/// in order: candidate label or number or entity id, exact title, then
/// normalized title containment (earliest mention wins).
pub fn parse_choice(
    response: &str,
    candidates: &[PresentedCandidate],
    positive: EntityId,
) -> Result<InteractionOutcome, AgentError> {
    if response.trim().is_empty() {
        return Err(AgentError::UnparseableChoice(response.to_string()));
    }
    let (choice_text, choice_end) = match CHOICE_LINE.captures(response).or_else(|| LEGACY_CHOICE.captures(response)) {
        Some(c) => {
            let m = c.get(1).unwrap();
            (m.as_str().to_string(), Some(m.end()))
        }
        None => (response.to_string(), None),
    };
    // "Chosen CD: Justified. Explanation: ..." on one line
    let choice_only = match EXPLANATION.find(&choice_text) {
        Some(m) => choice_text[..m.start()].to_string(),
        None => choice_text.clone(),
    };

    let selected = match_candidate(&choice_only, candidates, choice_end.is_none())
        .ok_or_else(|| AgentError::UnparseableChoice(response.to_string()))?;

    let explanation = match EXPLANATION.find(response) {
        Some(m) => response[m.end()..].trim().to_string(),
        None => match choice_end {
            Some(end) => response[end..].trim().to_string(),
            None => String::new(),
        },
    };
    Ok(InteractionOutcome {
        selected,
        explanation,
        correct: selected == positive,
    })
}

fn match_candidate(choice: &str, candidates: &[PresentedCandidate], free_text: bool) -> Option<EntityId> {
    let bare = strip_decoration(choice);
    if !free_text {
        for c in candidates {
            if bare.eq_ignore_ascii_case(&c.label)
                || bare == c.number.to_string()
                || bare == c.id.to_string()
            {
                return Some(c.id);
            }
        }
        if let Some(c) = candidates.iter().find(|c| bare == c.title) {
            return Some(c.id);
        }
    }
    let norm = normalize(choice);
    let mut hits: Vec<(usize, EntityId)> = candidates
        .iter()
        .filter_map(|c| contains_phrase(&norm, &normalize(&c.title)).map(|pos| (pos, c.id)))
        .collect();
    if hits.is_empty() {
        hits = candidates
            .iter()
            .filter_map(|c| contains_phrase(&norm, &normalize(&c.label)).map(|pos| (pos, c.id)))
            .collect();
    }
    if free_text && hits.len() > 1 {
        // a reply that names both candidates without a choice line is ambiguous
        return None;
    }
    hits.sort();
    hits.first().map(|(_, id)| *id)
}

/// Extracts the rewritten memory and appends it as a new version.
pub fn apply_memory_update(memory: &AgentMemory, response: &str) -> Result<AgentMemory, AgentError> {
    let text = extract_memory(response).ok_or_else(|| AgentError::UnparseableMemory(response.to_string()))?;
    Ok(memory.replaced(text))
}

fn extract_memory(response: &str) -> Option<String> {
    let start = MEMORY_TAG
        .find(response)
        .or_else(|| MEMORY_FALLBACK.find(response))?
        .end();
    let text = response[start..].trim().trim_matches('*').trim();
    (!text.is_empty()).then(|| text.to_string())
}

/// Reads a full ranking. Numbers on the `RANKING:` line refer to the
/// presented positions; without that line, titles are matched in order of
/// first mention. Repeats keep their first position and unmentioned
/// candidates follow in presentation order.
pub fn parse_ranking(response: &str, candidates: &[PresentedCandidate]) -> Result<Vec<EntityId>, AgentError> {
    let mut ranked: Vec<EntityId> = Vec::with_capacity(candidates.len());
    match RANKING_LINE.captures(response) {
        Some(c) => {
            for m in NUMBER.find_iter(c.get(1).unwrap().as_str()) {
                let Ok(n) = m.as_str().parse::<usize>() else { continue };
                if let Some(cand) = candidates.iter().find(|c| c.number == n) {
                    if !ranked.contains(&cand.id) {
                        ranked.push(cand.id);
                    }
                }
            }
        }
        None => {
            let norm = normalize(response);
            let mut hits: Vec<(usize, EntityId)> = candidates
                .iter()
                .filter_map(|c| contains_phrase(&norm, &normalize(&c.title)).map(|p| (p, c.id)))
                .collect();
            hits.sort();
            ranked.extend(hits.into_iter().map(|(_, id)| id));
        }
    }
    if ranked.is_empty() {
        return Err(AgentError::UnparseableRanking(response.to_string()));
    }
    for c in candidates {
        if !ranked.contains(&c.id) {
            ranked.push(c.id);
        }
    }
    Ok(ranked)
}
