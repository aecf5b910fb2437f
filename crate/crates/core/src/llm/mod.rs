//! Completion backends.
//!
//! [`LlmClient`] fronts one [`Backend`] and writes every call to a JSON-lines
//! transcript. Three backends exist: a deterministic [`MockBackend`] that
//! scores candidates by token overlap, an HTTP chat-completion client with
//! retries and a global in-flight cap, and a [`ReplayBackend`] that serves a
//! recorded transcript back.

mod http;
mod mock;
mod replay;
mod transcript;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, InflightLimiter, Transport, TransportError, UreqTransport};
pub use mock::{mock_policy, MockBackend};
pub use replay::ReplayBackend;
pub use transcript::{TranscriptLog, TranscriptRecord};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid completion config: {0}")]
    InvalidConfig(String),
    #[error("backend unavailable after {attempts} attempt(s): {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("prompt needs ~{estimated} tokens, budget is {budget}")]
    TokenLimitExceeded { estimated: usize, budget: usize },
    #[error("response had no text content: {0}")]
    MalformedResponse(String),
    #[error("no recorded response for step {0}")]
    ReplayMissing(String),
    #[error("recorded prompt for step {0} differs from the current one")]
    ReplayMismatch(String),
    #[error("transcript i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("transcript format: {0}")]
    Json(#[from] serde_json::Error),
}

impl LlmError {
    /// Whether the failure comes from the backend rather than local setup.
    pub fn is_backend_failure(&self) -> bool {
        matches!(
            self,
            LlmError::BackendUnavailable { .. }
                | LlmError::MalformedResponse(_)
                | LlmError::ReplayMissing(_)
                | LlmError::ReplayMismatch(_)
                | LlmError::TokenLimitExceeded { .. }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            "replay" => Ok(BackendKind::Replay),
            other => Err(format!("unknown backend `{other}` (expected mock, http or replay)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts per request, including the first.
    pub attempts: u32,
    /// Delay before retry k (the last entry repeats).
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 4,
            backoff_ms: vec![500, 1_000, 2_000, 4_000],
        }
    }
}

impl RetryPolicy {
    pub fn delay_before_retry(&self, retry: u32) -> std::time::Duration {
        let ms = self
            .backoff_ms
            .get(retry as usize)
            .or(self.backoff_ms.last())
            .copied()
            .unwrap_or(0);
        std::time::Duration::from_millis(ms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionConfig {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_inflight: usize,
    pub retry: RetryPolicy,
    /// Reject prompts estimated above this many tokens.
    pub prompt_token_budget: Option<usize>,
    /// Environment variable holding the bearer token for HTTP calls.
    pub api_key_env: String,
    /// Transcript file or directory served by the replay backend.
    pub replay_from: Option<PathBuf>,
    pub timeout_secs: u64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            endpoint: None,
            model: "mock".to_string(),
            max_tokens: 20_000,
            temperature: 1.0,
            top_p: 1.0,
            top_k: 250,
            max_inflight: 4,
            retry: RetryPolicy::default(),
            prompt_token_budget: None,
            api_key_env: "KGREC_API_KEY".to_string(),
            replay_from: None,
            timeout_secs: 120,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::InvalidConfig(m.to_string()));
        if self.max_tokens == 0 {
            return bad("max_tokens must be > 0");
        }
        if !(self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.max_inflight == 0 {
            return bad("max_inflight must be >= 1");
        }
        if self.retry.attempts == 0 {
            return bad("retry.attempts must be >= 1");
        }
        match self.backend {
            BackendKind::Http if self.endpoint.is_none() => bad("http backend needs an endpoint"),
            BackendKind::Replay if self.replay_from.is_none() => bad("replay backend needs a transcript path"),
            _ => Ok(()),
        }
    }

    /// Builds the configured backend, recording into `transcript` if given.
    pub fn build_client(&self, transcript: Option<Arc<TranscriptLog>>) -> Result<LlmClient, LlmError> {
        self.validate()?;
        let backend: Arc<dyn Backend> = match self.backend {
            BackendKind::Mock => Arc::new(MockBackend),
            BackendKind::Http => Arc::new(HttpBackend::new(self.clone(), UreqTransport::new(self.timeout_secs))),
            BackendKind::Replay => Arc::new(ReplayBackend::load(self.replay_from.as_ref().unwrap())?),
        };
        Ok(LlmClient {
            backend,
            transcript,
            prompt_token_budget: self.prompt_token_budget,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestTag {
    Interaction,
    Reflection,
    Ranking,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system: String,
    pub user: String,
    pub tag: RequestTag,
    /// `<channel>/<...>`; the channel names the transcript file.
    pub step_id: String,
}

impl CompletionRequest {
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        h.update([0u8]);
        h.update(self.user.as_bytes());
        hex::encode(h.finalize())
    }

    /// Rough size in tokens (four characters per token).
    pub fn estimated_tokens(&self) -> usize {
        (self.system.chars().count() + self.user.chars().count()).div_ceil(4)
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

/// A backend plus transcript recording. Cheap to clone and safe to share.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn Backend>,
    transcript: Option<Arc<TranscriptLog>>,
    prompt_token_budget: Option<usize>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("backend", &self.backend.name())
            .field("transcript", &self.transcript.as_ref().map(|t| t.dir().to_path_buf()))
            .finish()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            transcript: None,
            prompt_token_budget: None,
        }
    }

    pub fn mock() -> Self {
        Self::new(Arc::new(MockBackend))
    }

    pub fn with_transcript(mut self, transcript: Arc<TranscriptLog>) -> Self {
        self.transcript = Some(transcript);
        self
    }

    pub fn with_token_budget(mut self, budget: Option<usize>) -> Self {
        self.prompt_token_budget = budget;
        self
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let result = match self.prompt_token_budget {
            Some(budget) if request.estimated_tokens() > budget => Err(LlmError::TokenLimitExceeded {
                estimated: request.estimated_tokens(),
                budget,
            }),
            _ => self.backend.complete(request),
        };
        if let Some(t) = &self.transcript {
            t.append(&TranscriptRecord::new(request, self.backend.name(), &result))?;
        }
        result
    }
}
