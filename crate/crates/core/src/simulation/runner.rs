use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{read_checkpoint, write_json_atomic};
use super::{Popularity, SimConfig, SimError, TrainingSample, UserSplit};
use crate::agents::{
    apply_memory_update, init_item_memory, init_user_memory, parse_choice, AgentError, AgentMemory, CandidateView,
    InteractionOutcome, Presentation, PromptBuilder, PromptBundle,
};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::llm::{CompletionRequest, LlmClient, RequestTag};
use crate::path_text::{build_noninformative_set, trans_2hop, trans_3hop, NonInformativeSet, PathSource, PathText};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Applied,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub user: EntityId,
    pub step_index: usize,
    pub positive: EntityId,
    pub negative: EntityId,
    pub presentation: Presentation,
    pub status: StepStatus,
    pub selected: Option<EntityId>,
    pub correct: Option<bool>,
    pub failure: Option<String>,
    /// Number of KG-derived fragments placed in the interaction prompt.
    pub kg_sections: usize,
    pub user_memory_version: u32,
}

/// Everything needed to continue a user's simulation; also the checkpoint format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserState {
    pub user: EntityId,
    pub config_digest: String,
    pub samples: Vec<TrainingSample>,
    pub next_step: usize,
    pub consecutive_failures: usize,
    pub aborted: bool,
    pub user_memory: AgentMemory,
    /// This user's copies of the item agents it has met.
    pub item_memories: BTreeMap<EntityId, AgentMemory>,
    pub steps: Vec<StepRecord>,
}

impl UserState {
    pub fn finished(&self) -> bool {
        self.aborted || self.next_step >= self.samples.len()
    }

    pub fn checkpoint_path(dir: &Path, user: EntityId) -> PathBuf {
        dir.join(format!("user-{}.json", user.local_id))
    }
}

/// Shared read-only context for simulating any number of users.
pub struct Simulator<'a> {
    /// Graph with every held-out interaction removed.
    pub graph: &'a KnowledgeGraph,
    pub prompts: &'a PromptBuilder,
    pub client: &'a LlmClient,
    pub popularity: &'a Popularity,
    pub config: &'a SimConfig,
    pub config_digest: String,
    pub checkpoint_dir: Option<PathBuf>,
    pub resume: bool,
}

struct StepViews {
    pos_title: String,
    neg_title: String,
    pos_2: PathText,
    neg_2: PathText,
    pos_3: PathText,
    neg_3: PathText,
}

/// Memories produced by a step, committed only if every call succeeded.
struct StepResult {
    outcome: InteractionOutcome,
    user_memory: AgentMemory,
    pos_memory: AgentMemory,
    neg_memory: AgentMemory,
}

impl Simulator<'_> {
    /// Draws one negative per training positive, in order.
    pub fn plan(&self, split: &UserSplit) -> Result<Vec<TrainingSample>, SimError> {
        let mut rng = stream(self.config.seed, "negatives", &split.user.to_string());
        let exclude = split.all_items();
        split
            .train
            .iter()
            .enumerate()
            .map(|(k, &positive)| {
                Ok(TrainingSample {
                    user: split.user,
                    positive,
                    negative: self.popularity.sample_negative(&mut rng, split.user, &exclude)?,
                    step_index: k,
                })
            })
            .collect()
    }

    pub fn noninformative_set(&self, user: EntityId, samples: &[TrainingSample]) -> Result<NonInformativeSet, SimError> {
        if self.config.kg_enabled {
            Ok(build_noninformative_set(self.graph, user, samples)?)
        } else {
            Ok(NonInformativeSet::empty(user))
        }
    }

    fn fresh_state(&self, split: &UserSplit) -> Result<UserState, SimError> {
        Ok(UserState {
            user: split.user,
            config_digest: self.config_digest.clone(),
            samples: self.plan(split)?,
            next_step: 0,
            consecutive_failures: 0,
            aborted: false,
            user_memory: init_user_memory(split.user, &self.prompts.domain),
            item_memories: BTreeMap::new(),
            steps: Vec::new(),
        })
    }

    fn load_or_start(&self, split: &UserSplit) -> Result<UserState, SimError> {
        if let (true, Some(dir)) = (self.resume, &self.checkpoint_dir) {
            let path = UserState::checkpoint_path(dir, split.user);
            if let Some(state) = read_checkpoint::<UserState>(&path)? {
                if state.config_digest != self.config_digest {
                    return Err(SimError::CheckpointMismatch {
                        path: path.display().to_string(),
                    });
                }
                return Ok(state);
            }
        }
        self.fresh_state(split)
    }

    fn save(&self, state: &UserState) -> Result<(), SimError> {
        if let Some(dir) = &self.checkpoint_dir {
            write_json_atomic(&UserState::checkpoint_path(dir, state.user), state)?;
        }
        Ok(())
    }

    /// Runs (or resumes) one user until its samples are used up, it is
    /// aborted, or `stop_after` steps are done.
    pub fn simulate_user(&self, split: &UserSplit) -> Result<UserState, SimError> {
        let mut state = self.load_or_start(split)?;
        if state.finished() {
            return Ok(state);
        }
        let s_u = self.noninformative_set(split.user, &state.samples)?;
        while !state.finished() {
            if self.config.stop_after.is_some_and(|n| state.next_step >= n) {
                self.save(&state)?;
                return Ok(state);
            }
            let sample = state.samples[state.next_step].clone();
            let record = self.run_step(&mut state, &sample, &s_u)?;
            if record.status == StepStatus::Skipped {
                state.consecutive_failures += 1;
                if state.consecutive_failures >= self.config.max_consecutive_failures.max(1) {
                    tracing::warn!(user = %state.user, "aborting user after repeated failures");
                    state.aborted = true;
                }
            } else {
                state.consecutive_failures = 0;
            }
            state.steps.push(record);
            state.next_step += 1;
            let every = self.config.checkpoint_every;
            if state.finished() || (every > 0 && state.next_step % every == 0) {
                self.save(&state)?;
            }
        }
        Ok(state)
    }

    fn item_memory(&self, state: &UserState, item: EntityId) -> Result<AgentMemory, SimError> {
        if let Some(m) = state.item_memories.get(&item) {
            return Ok(m.clone());
        }
        let title = self.graph.label(item).unwrap_or_default();
        Ok(init_item_memory(
            item,
            title,
            &self.graph.item_categories(item),
            &self.prompts.domain,
        )?)
    }

    fn views(&self, sample: &TrainingSample, s_u: &NonInformativeSet) -> Result<StepViews, SimError> {
        let (u, p, n) = (sample.user, sample.positive, sample.negative);
        let title = |i| self.graph.label(i).unwrap_or_default().to_string();
        let (pos_2, neg_2, pos_3, neg_3) = if self.config.kg_enabled {
            (
                trans_2hop(self.graph, u, p)?,
                trans_2hop(self.graph, u, n)?,
                trans_3hop(self.graph, u, p, s_u)?,
                trans_3hop(self.graph, u, n, s_u)?,
            )
        } else {
            let e2 = PathText::empty(PathSource::TwoHop);
            let e3 = PathText::empty(PathSource::ThreeHop);
            (e2.clone(), e2, e3.clone(), e3)
        };
        Ok(StepViews {
            pos_title: title(p),
            neg_title: title(n),
            pos_2,
            neg_2,
            pos_3,
            neg_3,
        })
    }

    /// Sends `bundle`, parsing the reply with `parse`. A reply that fails to
    /// parse, or a backend failure, earns one retry with a format reminder.
    /// `Ok(Err(_))` means both attempts failed.
    fn ask<T>(
        &self,
        bundle: &PromptBundle,
        tag: RequestTag,
        step_id: &str,
        parse: impl Fn(&str) -> Result<T, AgentError>,
    ) -> Result<Result<T, String>, SimError> {
        ask_with_retry(self.client, self.prompts, bundle, tag, step_id, parse)
    }

    fn run_step(
        &self,
        state: &mut UserState,
        sample: &TrainingSample,
        s_u: &NonInformativeSet,
    ) -> Result<StepRecord, SimError> {
        let user = state.user;
        let k = sample.step_index;
        let mut rng = stream(self.config.seed, "presentation", &format!("{user}/{k}"));
        let order = if rng.random_bool(0.5) {
            Presentation::PositiveFirst
        } else {
            Presentation::NegativeFirst
        };
        let v = self.views(sample, s_u)?;
        let pos_mem = self.item_memory(state, sample.positive)?;
        let neg_mem = self.item_memory(state, sample.negative)?;
        let pos = CandidateView {
            id: sample.positive,
            title: &v.pos_title,
            memory: &pos_mem.text,
            two_hop: &v.pos_2,
            three_hop: &v.pos_3,
        };
        let neg = CandidateView {
            id: sample.negative,
            title: &v.neg_title,
            memory: &neg_mem.text,
            two_hop: &v.neg_2,
            three_hop: &v.neg_3,
        };

        let kg = self.config.kg_enabled;
        let interaction = self
            .prompts
            .build_interaction_prompt(&state.user_memory.text, pos, neg, kg, order)?;
        let mut record = StepRecord {
            user,
            step_index: k,
            positive: sample.positive,
            negative: sample.negative,
            presentation: order,
            status: StepStatus::Skipped,
            selected: None,
            correct: None,
            failure: None,
            kg_sections: interaction.kg_sections.len(),
            user_memory_version: state.user_memory.version,
        };

        let result = (|| -> Result<Result<StepResult, String>, SimError> {
            let base = format!("{user}/sim/{k}");
            let outcome = match self.ask(&interaction, RequestTag::Interaction, &format!("{base}/interaction"), |r| {
                parse_choice(r, &interaction.candidates, sample.positive)
            })? {
                Ok(o) => o,
                Err(e) => return Ok(Err(format!("interaction: {e}"))),
            };
            let reflection = self
                .prompts
                .build_reflection_prompt(&outcome, &state.user_memory.text, pos, neg, kg, order)?;
            let user_memory = match self.ask(&reflection, RequestTag::Reflection, &format!("{base}/reflect-user"), |r| {
                apply_memory_update(&state.user_memory, r)
            })? {
                Ok(m) => m,
                Err(e) => return Ok(Err(format!("user reflection: {e}"))),
            };
            let mut item_updates = Vec::with_capacity(2);
            for (me, other, memory, preferred, name) in [
                (pos, neg, &pos_mem, true, "reflect-item-pos"),
                (neg, pos, &neg_mem, false, "reflect-item-neg"),
            ] {
                let prompt = self
                    .prompts
                    .build_item_reflection_prompt(me, other, &user_memory.text, preferred, kg)?;
                match self.ask(&prompt, RequestTag::Reflection, &format!("{base}/{name}"), |r| {
                    apply_memory_update(memory, r)
                })? {
                    Ok(m) => item_updates.push(m),
                    Err(e) => return Ok(Err(format!("item reflection: {e}"))),
                }
            }
            let neg_memory = item_updates.pop().unwrap();
            let pos_memory = item_updates.pop().unwrap();
            Ok(Ok(StepResult {
                outcome,
                user_memory,
                pos_memory,
                neg_memory,
            }))
        })()?;

        match result {
            Ok(r) => {
                record.status = StepStatus::Applied;
                record.selected = Some(r.outcome.selected);
                record.correct = Some(r.outcome.correct);
                record.user_memory_version = r.user_memory.version;
                state.user_memory = r.user_memory;
                state.item_memories.insert(sample.positive, r.pos_memory);
                state.item_memories.insert(sample.negative, r.neg_memory);
            }
            Err(reason) => {
                tracing::warn!(%user, step = k, %reason, "step skipped");
                record.failure = Some(reason);
            }
        }
        Ok(record)
    }
}

/// Shared retry loop for simulation and ranking calls.
pub(crate) fn ask_with_retry<T>(
    client: &LlmClient,
    prompts: &PromptBuilder,
    bundle: &PromptBundle,
    tag: RequestTag,
    step_id: &str,
    parse: impl Fn(&str) -> Result<T, AgentError>,
) -> Result<Result<T, String>, SimError> {
    let mut last = String::new();
    for attempt in 0..2 {
        let mut user = bundle.user_message();
        if attempt > 0 {
            user.push_str("\n\n");
            user.push_str(&prompts.format_reminder());
        }
        let request = CompletionRequest {
            system: bundle.system_message().to_string(),
            user,
            tag,
            step_id: format!("{step_id}/{attempt}"),
        };
        match client.complete(&request) {
            Ok(text) => match parse(&text) {
                Ok(v) => return Ok(Ok(v)),
                Err(e) => last = e.to_string(),
            },
            Err(e) if e.is_backend_failure() => last = e.to_string(),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Err(last))
}
