//! End-to-end runs: dataset, sampled users, simulation and ranking, with
//! every artifact written under one run directory.
//!
//! ```text
//! <run>/config.json          RunConfig
//! <run>/splits.json          leave-last-out splits of the sampled users
//! <run>/checkpoints/         per-user simulation state
//! <run>/transcripts/         every simulation call, one JSONL file per user
//! <run>/steps.jsonl          step records, by user then step
//! <run>/memories.json        final user and item memories
//! <run>/summary.json         SimSummary
//! <run>/eval/                report.json, report.md, rank_records.jsonl,
//!                            word_counts.json, transcripts/
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{AgentMemory, PromptBuilder, TemplateError, Templates};
use crate::ingest::{
    load_dataset, sample_users, split_leave_last_out, training_graph, Dataset, IngestError, SamplingStrategy,
};
use crate::kg::{EntityId, KgError, KnowledgeGraph};
use crate::llm::{BackendKind, CompletionConfig, LlmClient, LlmError, TranscriptLog};
use crate::path_text::{word_count_report, NonInformativeSet, PathTextError, ReductionReport};
use crate::ranking_eval::{EvalConfig, EvalError, EvalReport, EvalUser, Evaluator, Method, CUTOFFS};
use crate::simulation::{
    read_checkpoint, write_json_atomic, Popularity, SimConfig, SimError, Simulator, StepRecord, StepStatus, UserSplit,
    UserState,
};

/// Name of the generator behind every seeded stream, recorded in configs so
/// seeds stay meaningful across implementations.
pub const RNG_ALGORITHM: &str = "chacha8(sha256(seed|purpose|key))";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    PathText(#[from] PathTextError),
    #[error(transparent)]
    Graph(#[from] KgError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{} of {total} users aborted after repeated backend failures", aborted.len())]
    UsersAborted { aborted: Vec<EntityId>, total: usize },
}

impl RunError {
    /// 1 usage, 2 data, 3 backend failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) | RunError::Sim(SimError::CheckpointMismatch { .. }) => 1,
            RunError::Llm(LlmError::InvalidConfig(_)) => 1,
            RunError::UsersAborted { .. } => 3,
            RunError::Llm(e) | RunError::Sim(SimError::Llm(e)) if e.is_backend_failure() => 3,
            RunError::Eval(EvalError::Sim(SimError::Llm(e))) if e.is_backend_failure() => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| RunError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_json_atomic(path, value).map_err(|e| match e {
        SimError::Io(source) => RunError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => RunError::Sim(other),
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunError> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn reset_dir(dir: &Path) -> Result<(), RunError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Dataset manifest.
    pub dataset: PathBuf,
    pub seed: u64,
    pub rng: String,
    pub users: usize,
    pub sampling: SamplingStrategy,
    pub kg_enabled: bool,
    pub candidates: usize,
    pub repeats: usize,
    pub methods: Vec<Method>,
    pub max_consecutive_failures: usize,
    /// Directory of `<name>.txt` files overriding the built-in templates.
    pub templates: Option<PathBuf>,
    pub llm: CompletionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            seed: 0,
            rng: RNG_ALGORITHM.to_string(),
            users: 100,
            sampling: SamplingStrategy::Dense,
            kg_enabled: true,
            candidates: 10,
            repeats: 3,
            methods: vec![Method::Agent, Method::Pop, Method::Bm25],
            max_consecutive_failures: 3,
            templates: None,
            llm: CompletionConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// "kg" or "no-kg".
    pub fn condition(&self) -> &'static str {
        if self.kg_enabled {
            "kg"
        } else {
            "no-kg"
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.users == 0 {
            return Err(RunError::Usage("--users must be at least 1".into()));
        }
        if self.candidates < 2 {
            return Err(RunError::Usage("--candidates must be at least 2".into()));
        }
        if self.repeats == 0 {
            return Err(RunError::Usage("--repeats must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(RunError::Usage("at least one method is needed".into()));
        }
        self.llm.validate()?;
        Ok(())
    }

    fn sim_config(&self, stop_after: Option<usize>) -> SimConfig {
        SimConfig {
            seed: self.seed,
            kg_enabled: self.kg_enabled,
            max_consecutive_failures: self.max_consecutive_failures,
            checkpoint_every: 1,
            stop_after,
        }
    }

    fn prompts(&self, dataset: &Dataset) -> Result<PromptBuilder, RunError> {
        let templates = match &self.templates {
            Some(dir) => Templates::with_overrides(dir)?,
            None => Templates::default(),
        };
        Ok(PromptBuilder::new(dataset.manifest.domain.clone(), templates))
    }

    /// Client for one stage; a replay source that is a run directory is
    /// narrowed to that stage's transcripts.
    fn client(&self, stage: &str, transcripts: &Path) -> Result<LlmClient, RunError> {
        let mut llm = self.llm.clone();
        if llm.backend == BackendKind::Replay {
            if let Some(src) = &llm.replay_from {
                let sub = if stage == "sim" {
                    src.join("transcripts")
                } else {
                    src.join("eval").join("transcripts")
                };
                if sub.is_dir() {
                    llm.replay_from = Some(sub);
                }
            }
        }
        let log = Arc::new(TranscriptLog::create(transcripts)?);
        Ok(llm.build_client(Some(log))?)
    }
}

/// Everything derived from the config before any agent runs.
pub struct Prepared {
    pub dataset: Dataset,
    pub splits: Vec<UserSplit>,
    /// Dataset graph without the held-out purchases.
    pub train_graph: KnowledgeGraph,
    /// Counts over the sampled users' training items.
    pub popularity: Popularity,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, RunError> {
    let dataset = load_dataset(&cfg.dataset)?;
    let subset = sample_users(&dataset.histories, cfg.users, cfg.seed, cfg.sampling)?;
    let splits = split_leave_last_out(&subset.histories)?;
    let train_graph = training_graph(&dataset.graph, &splits);
    let popularity = Popularity::from_interactions(splits.iter().flat_map(|s| s.train.iter()));
    Ok(Prepared {
        dataset,
        splits,
        train_graph,
        popularity,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimulateOptions {
    pub jobs: usize,
    pub resume: bool,
    /// Pause each user after this many steps.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub condition: String,
    pub config_digest: String,
    pub users: usize,
    pub steps: usize,
    pub applied: usize,
    pub skipped: usize,
    pub correct: usize,
    /// Correct choices over applied steps.
    pub accuracy: f64,
    pub aborted_users: Vec<EntityId>,
    /// Users stopped early by `stop_after`.
    pub paused_users: Vec<EntityId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserMemories {
    pub user: EntityId,
    pub aborted: bool,
    pub user_memory: AgentMemory,
    pub item_memories: BTreeMap<EntityId, AgentMemory>,
}

pub fn checkpoint_dir(run: &Path) -> PathBuf {
    run.join("checkpoints")
}

fn check_resumable(cfg: &RunConfig, out: &Path) -> Result<(), RunError> {
    let path = out.join("config.json");
    if path.exists() {
        let old: RunConfig = read_json(&path)?;
        if old.digest() != cfg.digest() {
            return Err(SimError::CheckpointMismatch {
                path: path.display().to_string(),
            }
            .into());
        }
    }
    Ok(())
}

/// Stage 2: simulates every sampled user and writes the run directory.
/// Returns the summary; aborted users are reported through the summary,
/// not as an error.
pub fn simulate_run(cfg: &RunConfig, out: &Path, opts: &SimulateOptions) -> Result<SimSummary, RunError> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    if opts.resume {
        check_resumable(cfg, out)?;
    } else {
        reset_dir(&checkpoint_dir(out))?;
        reset_dir(&out.join("transcripts"))?;
    }
    write_json(&out.join("config.json"), cfg)?;
    write_json(&out.join("splits.json"), &prep.splits)?;

    let prompts = cfg.prompts(&prep.dataset)?;
    let client = cfg.client("sim", &out.join("transcripts"))?;
    let sim_config = cfg.sim_config(opts.stop_after);
    let sim = Simulator {
        graph: &prep.train_graph,
        prompts: &prompts,
        client: &client,
        popularity: &prep.popularity,
        config: &sim_config,
        config_digest: cfg.digest(),
        checkpoint_dir: Some(checkpoint_dir(out)),
        resume: opts.resume,
    };
    let states = parallel(&prep.splits, opts.jobs, |split| sim.simulate_user(split))?;
    write_outputs(cfg, out, &states)
}

fn parallel<T: Sync, R: Send, E: Send>(
    inputs: &[T],
    jobs: usize,
    f: impl Fn(&T) -> Result<R, E> + Sync,
) -> Result<Vec<R>, E> {
    let results: Mutex<Vec<Option<Result<R, E>>>> = Mutex::new((0..inputs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, inputs.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= inputs.len() {
                    break;
                }
                let r = f(&inputs[k]);
                results.lock().unwrap()[k] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every input processed"))
        .collect()
}

fn write_outputs(cfg: &RunConfig, out: &Path, states: &[UserState]) -> Result<SimSummary, RunError> {
    let steps: Vec<&StepRecord> = states.iter().flat_map(|s| s.steps.iter()).collect();
    write_jsonl(&out.join("steps.jsonl"), &steps)?;
    let memories: Vec<UserMemories> = states
        .iter()
        .map(|s| UserMemories {
            user: s.user,
            aborted: s.aborted,
            user_memory: s.user_memory.clone(),
            item_memories: s.item_memories.clone(),
        })
        .collect();
    write_json(&out.join("memories.json"), &memories)?;
    let applied = steps.iter().filter(|s| s.status == StepStatus::Applied).count();
    let correct = steps.iter().filter(|s| s.correct == Some(true)).count();
    let summary = SimSummary {
        condition: cfg.condition().to_string(),
        config_digest: cfg.digest(),
        users: states.len(),
        steps: steps.len(),
        applied,
        skipped: steps.len() - applied,
        correct,
        accuracy: if applied == 0 { 0.0 } else { correct as f64 / applied as f64 },
        aborted_users: states.iter().filter(|s| s.aborted).map(|s| s.user).collect(),
        paused_users: states.iter().filter(|s| !s.finished()).map(|s| s.user).collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvaluateOptions {
    pub jobs: usize,
    /// Overrides the run config when set.
    pub methods: Option<Vec<Method>>,
    pub repeats: Option<usize>,
    pub word_counts: bool,
}

/// Loads the simulated run in `run` and ranks every user's held-out item.
pub fn evaluate_run(run: &Path, opts: &EvaluateOptions) -> Result<EvalReport, RunError> {
    let cfg: RunConfig = read_json(&run.join("config.json"))?;
    let prep = prepare(&cfg)?;
    let mut states = Vec::with_capacity(prep.splits.len());
    for split in &prep.splits {
        let path = UserState::checkpoint_path(&checkpoint_dir(run), split.user);
        let state: UserState = read_checkpoint(&path)?
            .ok_or_else(|| RunError::Usage(format!("{} has not been simulated (missing {})", split.user, path.display())))?;
        states.push(state);
    }
    let eval_dir = run.join("eval");
    reset_dir(&eval_dir)?;
    let prompts = cfg.prompts(&prep.dataset)?;
    let client = cfg.client("eval", &eval_dir.join("transcripts"))?;
    let eval_config = EvalConfig {
        seed: cfg.seed,
        candidates: cfg.candidates,
        repeats: opts.repeats.unwrap_or(cfg.repeats),
        kg_enabled: cfg.kg_enabled,
        ks: CUTOFFS.to_vec(),
        methods: opts.methods.clone().unwrap_or_else(|| cfg.methods.clone()),
        jobs: opts.jobs,
    };
    if eval_config.repeats == 0 || eval_config.methods.is_empty() {
        return Err(RunError::Usage("evaluation needs at least one repeat and one method".into()));
    }
    let users: Vec<EvalUser<'_>> = prep
        .splits
        .iter()
        .zip(&states)
        .map(|(split, s)| EvalUser {
            split,
            user_memory: &s.user_memory.text,
            item_memories: &s.item_memories,
        })
        .collect();
    let evaluator = Evaluator {
        graph: &prep.train_graph,
        prompts: &prompts,
        client: &client,
        popularity: &prep.popularity,
        config: &eval_config,
    };
    let (mut report, records) = evaluator.evaluate(&users)?;
    if opts.word_counts {
        let w = training_word_counts(&prep.train_graph, &states, cfg.kg_enabled)?;
        write_json(&eval_dir.join("word_counts.json"), &w)?;
        report.word_counts = Some(w);
    }
    write_jsonl(&eval_dir.join("rank_records.jsonl"), &records)?;
    write_json(&eval_dir.join("report.json"), &report)?;
    write_bytes(&eval_dir.join("report.md"), report.to_markdown().as_bytes())?;
    Ok(report)
}

/// Word counts over every training pair (positives and negatives) with each
/// user's non-informative set applied to the 3-hop text.
pub fn training_word_counts(
    graph: &KnowledgeGraph,
    states: &[UserState],
    apply_filter: bool,
) -> Result<ReductionReport, RunError> {
    let mut pairs = Vec::new();
    let mut filters = BTreeMap::new();
    for s in states {
        for t in &s.samples {
            pairs.push((s.user, t.positive));
            pairs.push((s.user, t.negative));
        }
        let set = if apply_filter {
            crate::path_text::build_noninformative_set(graph, s.user, &s.samples)?
        } else {
            NonInformativeSet::empty(s.user)
        };
        filters.insert(s.user, set);
    }
    Ok(word_count_report(graph, &pairs, &filters)?)
}

/// `simulate_run` then `evaluate_run`; aborted users turn into an error
/// after the report is written.
pub fn full_run(
    cfg: &RunConfig,
    out: &Path,
    sim: &SimulateOptions,
    eval: &EvaluateOptions,
) -> Result<(SimSummary, Option<EvalReport>), RunError> {
    let summary = simulate_run(cfg, out, sim)?;
    if !summary.paused_users.is_empty() {
        return Ok((summary, None));
    }
    let report = evaluate_run(out, eval)?;
    if !summary.aborted_users.is_empty() {
        return Err(RunError::UsersAborted {
            aborted: summary.aborted_users,
            total: summary.users,
        });
    }
    Ok((summary, Some(report)))
}
