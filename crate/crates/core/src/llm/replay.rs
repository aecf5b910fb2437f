use std::collections::HashMap;
use std::path::Path;

use super::{Backend, CompletionRequest, LlmError, TranscriptLog};

/// Serves responses from a recorded transcript, keyed by step id. The
/// prompt digest must match the recording; a recorded failure is replayed
/// as a failure.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    entries: HashMap<String, (String, Result<String, String>)>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let mut entries = HashMap::new();
        for r in TranscriptLog::read_all(path)? {
            let outcome = match (r.response, r.error) {
                (Some(resp), _) => Ok(resp),
                (None, e) => Err(e.unwrap_or_default()),
            };
            entries.insert(r.step_id, (r.prompt_sha256, outcome));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let (digest, outcome) = self
            .entries
            .get(&request.step_id)
            .ok_or_else(|| LlmError::ReplayMissing(request.step_id.clone()))?;
        if *digest != request.digest() {
            return Err(LlmError::ReplayMismatch(request.step_id.clone()));
        }
        outcome.clone().map_err(|last_error| LlmError::BackendUnavailable {
            attempts: 0,
            last_error,
        })
    }
}
