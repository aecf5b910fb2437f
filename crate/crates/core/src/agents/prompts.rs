//! Prompt construction for interaction, reflection and ranking.
//!
//! Every builder takes a `kg_enabled` switch. With it off, nothing derived
//! from graph paths reaches the prompt and `kg_sections` stays empty, which
//! is the no-KG ablation.

use serde::{Deserialize, Serialize};

use super::template::{TemplateError, Templates};
use super::{AgentError, Domain, InteractionOutcome};
use crate::kg::EntityId;
use crate::path_text::PathText;
use crate::text::{one_line, quote_comma};

/// A rendered prompt, split the way it is sent: system slot, user body,
/// and the trailing response-format instructions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub role_preamble: String,
    pub body: String,
    /// Each KG-derived fragment that was inserted into `body`.
    pub kg_sections: Vec<String>,
    pub response_schema: String,
    /// Candidates in the order they were shown.
    pub candidates: Vec<PresentedCandidate>,
}

impl PromptBundle {
    pub fn system_message(&self) -> &str {
        &self.role_preamble
    }

    pub fn user_message(&self) -> String {
        format!("{}\n\n{}", self.body, self.response_schema)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentedCandidate {
    /// 1-based position in the prompt.
    pub number: usize,
    pub label: String,
    pub id: EntityId,
    pub title: String,
}

/// An item as the user agent sees it during one simulation step.
#[derive(Clone, Copy, Debug)]
pub struct CandidateView<'a> {
    pub id: EntityId,
    pub title: &'a str,
    pub memory: &'a str,
    pub two_hop: &'a PathText,
    pub three_hop: &'a PathText,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presentation {
    PositiveFirst,
    NegativeFirst,
}

impl Presentation {
    pub fn arrange<T: Copy>(self, positive: T, negative: T) -> [T; 2] {
        match self {
            Presentation::PositiveFirst => [positive, negative],
            Presentation::NegativeFirst => [negative, positive],
        }
    }
}

/// `CD1`, or `beauty product 1` when the noun has spaces.
pub fn candidate_label(noun: &str, number: usize) -> String {
    if noun.contains(char::is_whitespace) {
        format!("{noun} {number}")
    } else {
        format!("{noun}{number}")
    }
}

#[derive(Clone, Debug, Default)]
pub struct PromptBuilder {
    pub domain: Domain,
    pub templates: Templates,
}

impl PromptBuilder {
    pub fn new(domain: Domain, templates: Templates) -> Self {
        Self { domain, templates }
    }

    fn noun(&self) -> &str {
        &self.domain.noun
    }

    fn present(&self, views: &[CandidateView<'_>]) -> Vec<PresentedCandidate> {
        views
            .iter()
            .enumerate()
            .map(|(k, v)| PresentedCandidate {
                number: k + 1,
                label: candidate_label(self.noun(), k + 1),
                id: v.id,
                title: v.title.to_string(),
            })
            .collect()
    }

    /// Candidate lines shared by the interaction and reflection prompts.
    fn pair_block(
        &self,
        views: &[CandidateView<'_>; 2],
        kg_enabled: bool,
        kg_sections: &mut Vec<String>,
    ) -> Result<String, TemplateError> {
        let mut lines = Vec::new();
        for (k, v) in views.iter().enumerate() {
            let mut relations = String::new();
            if kg_enabled && !v.two_hop.is_empty() {
                let rel = v.two_hop.second_person(self.noun());
                relations = self
                    .templates
                    .render("interaction_relations", &[("noun", self.noun()), ("relations", &rel)])?;
                kg_sections.push(relations.trim().to_string());
            }
            lines.push(self.templates.render(
                "interaction_candidate",
                &[
                    ("label", &candidate_label(self.noun(), k + 1)),
                    ("memory", &one_line(v.memory)),
                    ("relations", &relations),
                ],
            )?);
        }
        Ok(lines.join("\n"))
    }

    pub fn build_interaction_prompt(
        &self,
        user_memory: &str,
        positive: CandidateView<'_>,
        negative: CandidateView<'_>,
        kg_enabled: bool,
        order: Presentation,
    ) -> Result<PromptBundle, TemplateError> {
        let views = order.arrange(positive, negative);
        let mut kg_sections = Vec::new();
        let candidates = self.pair_block(&views, kg_enabled, &mut kg_sections)?;
        let noun = self.noun();
        Ok(PromptBundle {
            role_preamble: self.templates.render(
                "interaction_system",
                &[("noun", noun), ("user_memory", &one_line(user_memory))],
            )?,
            body: self
                .templates
                .render("interaction_user", &[("noun", noun), ("candidates", &candidates)])?,
            kg_sections,
            response_schema: self.templates.render("schema_choice", &[("noun", noun)])?,
            candidates: self.present(&views),
        })
    }

    /// Reflection prompt for the user agent. Candidates keep the order they
    /// had in the interaction prompt.
    #[allow(clippy::too_many_arguments)]
    pub fn build_reflection_prompt(
        &self,
        outcome: &InteractionOutcome,
        user_memory: &str,
        positive: CandidateView<'_>,
        negative: CandidateView<'_>,
        kg_enabled: bool,
        order: Presentation,
    ) -> Result<PromptBundle, TemplateError> {
        let views = order.arrange(positive, negative);
        let presented = self.present(&views);
        let label_of = |id: EntityId| {
            presented
                .iter()
                .find(|c| c.id == id)
                .map(|c| c.label.clone())
                .unwrap_or_default()
        };
        let selected = if outcome.selected == positive.id { positive } else { negative };
        let noun = self.noun();
        let mut kg_sections = Vec::new();
        let candidates = self.pair_block(&views, kg_enabled, &mut kg_sections)?;

        let pos_label = label_of(positive.id);
        let neg_label = label_of(negative.id);
        let verdict_values = [("noun", noun), ("pos_label", pos_label.as_str()), ("neg_label", neg_label.as_str())];
        let verdict = if outcome.correct {
            self.templates.render("verdict_correct", &verdict_values)?
        } else {
            self.templates.render("verdict_incorrect", &verdict_values)?
        };

        let mut preference_hint = String::new();
        let mut dislike_hint = String::new();
        if kg_enabled {
            if !positive.three_hop.labels.is_empty() {
                preference_hint = self.templates.render(
                    "preference_hint",
                    &[("pos_title", positive.title), ("labels", &quote_comma(&positive.three_hop.labels))],
                )?;
                kg_sections.push(preference_hint.clone());
            }
            if !negative.three_hop.labels.is_empty() {
                dislike_hint = self.templates.render(
                    "dislike_hint",
                    &[("neg_title", negative.title), ("labels", &quote_comma(&negative.three_hop.labels))],
                )?;
                kg_sections.push(dislike_hint.clone());
            }
        }

        let explanation = one_line(&outcome.explanation);
        let body = self.templates.render(
            "reflection_user",
            &[
                ("noun", noun),
                ("noun_plural", &self.domain.noun_plural),
                ("candidates", &candidates),
                ("selected_label", &label_of(selected.id)),
                ("selected_title", selected.title),
                ("explanation", if explanation.is_empty() { "(none given)" } else { &explanation }),
                ("verdict", &verdict),
                ("preference_hint", &preference_hint),
                ("dislike_hint", &dislike_hint),
            ],
        )?;
        Ok(PromptBundle {
            role_preamble: self.templates.render(
                "reflection_user_system",
                &[("noun", noun), ("user_memory", &one_line(user_memory))],
            )?,
            body,
            kg_sections,
            response_schema: self
                .templates
                .render("schema_memory", &[("subject", "self-introduction")])?,
            candidates: presented,
        })
    }

    /// Reflection prompt addressed to one of the two item agents.
    pub fn build_item_reflection_prompt(
        &self,
        item: CandidateView<'_>,
        other: CandidateView<'_>,
        user_memory: &str,
        preferred: bool,
        kg_enabled: bool,
    ) -> Result<PromptBundle, TemplateError> {
        let noun = self.noun();
        let mut kg_sections = Vec::new();
        let mut relations = String::new();
        let mut feature_hint = String::new();
        if kg_enabled {
            if !item.two_hop.is_empty() {
                relations = self
                    .templates
                    .render("item_relations", &[("relations", &item.two_hop.text())])?;
                kg_sections.push(relations.clone());
            }
            if !item.three_hop.labels.is_empty() {
                feature_hint = self
                    .templates
                    .render("item_feature_hint", &[("labels", &quote_comma(&item.three_hop.labels))])?;
                kg_sections.push(feature_hint.clone());
            }
        }
        let verdict = self.templates.render(
            if preferred { "verdict_item_preferred" } else { "verdict_item_rejected" },
            &[("noun", noun)],
        )?;
        Ok(PromptBundle {
            role_preamble: self.templates.render(
                "reflection_item_system",
                &[("noun", noun), ("item_memory", &one_line(item.memory))],
            )?,
            body: self.templates.render(
                "reflection_item",
                &[
                    ("noun", noun),
                    ("user_memory", &one_line(user_memory)),
                    ("other_memory", &one_line(other.memory)),
                    ("relations", &relations),
                    ("verdict", &verdict),
                    ("feature_hint", &feature_hint),
                ],
            )?,
            kg_sections,
            response_schema: self.templates.render("schema_memory", &[("subject", "description")])?,
            candidates: Vec::new(),
        })
    }

    /// Ranking prompt over `candidates` in presentation order.
    pub fn build_ranking_prompt(
        &self,
        user_memory: &str,
        candidates: &[RankingView<'_>],
        kg_enabled: bool,
    ) -> Result<PromptBundle, AgentError> {
        if candidates.len() < 2 {
            return Err(AgentError::TooFewCandidates(candidates.len()));
        }
        let noun = self.noun();
        let mut kg_sections = Vec::new();
        let mut lines = Vec::new();
        for (k, c) in candidates.iter().enumerate() {
            let mut relations = String::new();
            if kg_enabled && !c.two_hop.is_empty() {
                let rel = c.two_hop.second_person(noun);
                kg_sections.push(rel.clone());
                relations = format!(" {rel}");
            }
            lines.push(self.templates.render(
                "ranking_candidate",
                &[
                    ("number", &(k + 1).to_string()),
                    ("memory", &one_line(c.memory)),
                    ("relations", &relations),
                ],
            )?);
        }
        let presented = candidates
            .iter()
            .enumerate()
            .map(|(k, c)| PresentedCandidate {
                number: k + 1,
                label: (k + 1).to_string(),
                id: c.id,
                title: c.title.to_string(),
            })
            .collect();
        Ok(PromptBundle {
            role_preamble: self.templates.render(
                "ranking_system",
                &[("noun", noun), ("user_memory", &one_line(user_memory))],
            )?,
            body: self.templates.render(
                "ranking_user",
                &[
                    ("noun", noun),
                    ("noun_plural", &self.domain.noun_plural),
                    ("candidates", &lines.join("\n")),
                ],
            )?,
            kg_sections,
            response_schema: self
                .templates
                .render("schema_ranking", &[("count", &candidates.len().to_string())])?,
            candidates: presented,
        })
    }

    pub fn format_reminder(&self) -> String {
        self.templates
            .render("format_reminder", &[("noun", self.noun())])
            .unwrap_or_default()
    }
}

/// A ranking candidate as shown to the user agent.
#[derive(Clone, Copy, Debug)]
pub struct RankingView<'a> {
    pub id: EntityId,
    pub title: &'a str,
    pub memory: &'a str,
    pub two_hop: &'a PathText,
}
