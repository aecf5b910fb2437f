//! Deterministic stand-in for a language model.
//!
//! The policy reads the prompt text produced by the default templates. A
//! candidate scores one point per content token it shares with the
//! preference part of the user's self-introduction; tokens common to every
//! candidate and a small stopword list are ignored. Ties go to the candidate
//! shown first. Reflections append the labels of the preferred candidate to
//! a `Features I prefer:` sentence and those of the rejected one to a
//! `Features I dislike:` sentence.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use super::{Backend, CompletionRequest, LlmError};
use crate::text::{quote_space, quoted_labels, tokenize};

const PREFER: &str = "Features I prefer:";
const DISLIKE: &str = "Features I dislike:";
const ITEM_FEATURES: &str = "Highly related features:";

const STOPWORDS: &[&str] = &[
    "a", "about", "also", "an", "and", "are", "as", "be", "between", "by", "called", "category", "described",
    "enjoy", "features", "for", "from", "i", "in", "is", "it", "me", "mentions", "much", "my", "of", "on",
    "purchased", "relations", "the", "these", "this", "to", "very", "which", "with", "you", "your",
];

static PAIR_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^([^:\n]*?\d+): (.*)$").unwrap());
static RANK_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^(\d+)\. (.*)$").unwrap());
static VERDICT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"prefer (.+?\d+) over (.+?\d+)\.").unwrap());

#[derive(Clone, Copy, Debug, Default)]
pub struct MockBackend;

impl Backend for MockBackend {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        Ok(mock_policy(&request.system, &request.user))
    }
}

fn content_tokens(s: &str) -> BTreeSet<String> {
    tokenize(s)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// The user's self-introduction as split by the mock's own format.
#[derive(Debug, Default, PartialEq, Eq)]
struct Profile {
    base: String,
    prefer: Vec<String>,
    dislike: Vec<String>,
    structured: bool,
}

impl Profile {
    fn parse(memory: &str) -> Self {
        let p = memory.find(PREFER);
        let d = memory.find(DISLIKE);
        let cut = [p, d].into_iter().flatten().min();
        let Some(cut) = cut else {
            return Profile {
                base: memory.trim().to_string(),
                ..Default::default()
            };
        };
        let segment = |start: Option<usize>, len: usize| -> Vec<String> {
            let Some(s) = start else { return Vec::new() };
            let from = s + len;
            let end = [p, d].into_iter().flatten().filter(|&x| x > s).min().unwrap_or(memory.len());
            quoted_labels(&memory[from..end])
        };
        Profile {
            base: memory[..cut].trim().to_string(),
            prefer: segment(p, PREFER.len()),
            dislike: segment(d, DISLIKE.len()),
            structured: true,
        }
    }

    /// Tokens the agent is looking for. Unstructured text counts as a whole.
    fn preference_tokens(&self) -> BTreeSet<String> {
        if self.structured {
            self.prefer.iter().flat_map(|l| tokenize(l)).collect()
        } else {
            content_tokens(&self.base)
        }
    }

    fn render(&self) -> String {
        let mut out = self.base.clone();
        if !self.prefer.is_empty() {
            out.push_str(&format!(" {PREFER} {}.", quote_space(&self.prefer)));
        }
        if !self.dislike.is_empty() {
            out.push_str(&format!(" {DISLIKE} {}.", quote_space(&self.dislike)));
        }
        out.trim().to_string()
    }
}

fn text_after<'a>(s: &'a str, marker: &str) -> Option<&'a str> {
    s.find(marker).map(|i| s[i + marker.len()..].trim())
}

fn user_memory_from_system(system: &str) -> &str {
    text_after(system, "dislikes: ").unwrap_or("")
}

struct Block {
    key: String,
    text: String,
}

/// Content tokens per block, minus those shared by every block.
fn distinctive_tokens(blocks: &[Block]) -> Vec<BTreeSet<String>> {
    let sets: Vec<BTreeSet<String>> = blocks.iter().map(|b| content_tokens(&b.text)).collect();
    let common: BTreeSet<String> = match sets.split_first() {
        Some((first, rest)) => first
            .iter()
            .filter(|t| rest.iter().all(|s| s.contains(*t)))
            .cloned()
            .collect(),
        None => BTreeSet::new(),
    };
    sets.into_iter()
        .map(|s| s.difference(&common).cloned().collect())
        .collect()
}

fn scores(blocks: &[Block], prefs: &BTreeSet<String>) -> Vec<usize> {
    distinctive_tokens(blocks)
        .iter()
        .map(|t| t.intersection(prefs).count())
        .collect()
}

fn pair_blocks(user: &str) -> Vec<Block> {
    PAIR_LINE
        .captures_iter(user)
        .map(|c| Block {
            key: c[1].trim().to_string(),
            text: c[2].to_string(),
        })
        .collect()
}

fn line_starting<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines().find(|l| l.starts_with(prefix))
}

/// Answers a prompt rendered from the default templates.
pub fn mock_policy(system: &str, user: &str) -> String {
    if user.contains("\nCHOICE:") {
        choose(system, user)
    } else if user.contains("\nRANKING:") {
        rank(system, user)
    } else if user.contains("\nMEMORY:") {
        if system.contains("Here is your current description:") {
            reflect_item(system, user)
        } else {
            reflect_user(system, user)
        }
    } else {
        "I am not sure what is being asked.".to_string()
    }
}

fn choose(system: &str, user: &str) -> String {
    let profile = Profile::parse(user_memory_from_system(system));
    let blocks = pair_blocks(user);
    if blocks.is_empty() {
        return "I could not find any candidates.".to_string();
    }
    let s = scores(&blocks, &profile.preference_tokens());
    let best = argmax_first(&s);
    format!(
        "CHOICE: {}\nEXPLANATION: It shares {} of the features I prefer.",
        blocks[best].key, s[best]
    )
}

fn argmax_first(s: &[usize]) -> usize {
    let mut best = 0;
    for (k, &v) in s.iter().enumerate() {
        if v > s[best] {
            best = k;
        }
    }
    best
}

fn rank(system: &str, user: &str) -> String {
    let profile = Profile::parse(user_memory_from_system(system));
    let blocks: Vec<Block> = RANK_LINE
        .captures_iter(user)
        .map(|c| Block {
            key: c[1].to_string(),
            text: c[2].to_string(),
        })
        .collect();
    if blocks.is_empty() {
        return "I could not find any candidates.".to_string();
    }
    let s = scores(&blocks, &profile.preference_tokens());
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.sort_by(|&a, &b| s[b].cmp(&s[a]).then(a.cmp(&b)));
    let ranked: Vec<&str> = order.iter().map(|&k| blocks[k].key.as_str()).collect();
    format!("RANKING: {}", ranked.join(" > "))
}

fn hint_labels(user: &str, prefix: &str) -> Vec<String> {
    line_starting(user, prefix)
        .and_then(|l| l.rfind("”: ").map(|i| quoted_labels(&l[i..])))
        .unwrap_or_default()
}

fn reflect_user(system: &str, user: &str) -> String {
    let mut profile = Profile::parse(user_memory_from_system(system));
    let blocks = pair_blocks(user);
    let Some(v) = VERDICT.captures(user) else {
        return format!("MEMORY: {}", profile.render());
    };
    let (pos_key, neg_key) = (v[1].trim().to_string(), v[2].trim().to_string());
    let idx = |key: &str| blocks.iter().position(|b| b.key == key);
    let distinct = distinctive_tokens(&blocks);
    let labels_of = |key: &str, hint: Vec<String>| -> Vec<String> {
        let Some(k) = idx(key) else { return hint };
        let mut labels = quoted_labels(&blocks[k].text);
        labels.extend(hint);
        if labels.is_empty() {
            // nothing but the item description to go on
            labels = distinct[k].iter().cloned().collect();
        }
        labels
    };
    let pos = labels_of(&pos_key, hint_labels(user, "When summarizing your preference"));
    let neg = labels_of(&neg_key, hint_labels(user, "When summarizing your dislikes"));

    if !profile.structured {
        profile.structured = true;
    }
    let prefer: BTreeSet<String> = profile.prefer.drain(..).chain(pos).collect();
    let dislike: BTreeSet<String> = profile
        .dislike
        .drain(..)
        .chain(neg)
        .filter(|l| !prefer.contains(l))
        .collect();
    profile.prefer = prefer.into_iter().collect();
    profile.dislike = dislike.into_iter().collect();
    format!("MEMORY: {}", profile.render())
}

fn reflect_item(system: &str, user: &str) -> String {
    let current = text_after(system, "Here is your current description: ").unwrap_or("");
    let (base, existing) = match current.find(ITEM_FEATURES) {
        Some(i) => (current[..i].trim(), quoted_labels(&current[i..])),
        None => (current.trim(), Vec::new()),
    };
    let mut labels: BTreeSet<String> = existing.into_iter().collect();
    if user.contains("The user preferred you over") {
        for prefix in ["The relations between the user and you:", "You can refer to these features"] {
            if let Some(line) = line_starting(user, prefix) {
                labels.extend(quoted_labels(line));
            }
        }
    }
    if labels.is_empty() {
        return format!("MEMORY: {base}");
    }
    let labels: Vec<String> = labels.into_iter().collect();
    format!("MEMORY: {base} {ITEM_FEATURES} {}.", quote_space(&labels))
}
