use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, LlmError, RequestTag};

/// One completion call as written to `<dir>/<channel>.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub step_id: String,
    pub tag: RequestTag,
    pub backend: String,
    pub prompt_sha256: String,
    pub system: String,
    pub user: String,
    pub response: Option<String>,
    pub error: Option<String>,
}

impl TranscriptRecord {
    pub fn new(request: &CompletionRequest, backend: &str, result: &Result<String, LlmError>) -> Self {
        Self {
            step_id: request.step_id.clone(),
            tag: request.tag,
            backend: backend.to_string(),
            prompt_sha256: request.digest(),
            system: request.system.clone(),
            user: request.user.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        }
    }

    /// Leading segment of the step id; one file per channel.
    pub fn channel(&self) -> &str {
        channel_of(&self.step_id)
    }
}

pub(crate) fn channel_of(step_id: &str) -> &str {
    step_id.split('/').next().unwrap_or("misc")
}

fn file_name(channel: &str) -> String {
    let safe: String = channel
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect();
    format!("{safe}.jsonl")
}

/// Append-only JSON-lines log, split by channel so that concurrent users
/// never interleave within one file.
#[derive(Debug)]
pub struct TranscriptLog {
    dir: PathBuf,
    files: Mutex<HashMap<String, BufWriter<File>>>,
}

impl TranscriptLog {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            files: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&self, record: &TranscriptRecord) -> Result<(), LlmError> {
        let line = serde_json::to_string(record)?;
        let mut files = self.files.lock().unwrap();
        let channel = record.channel().to_string();
        if !files.contains_key(&channel) {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.dir.join(file_name(&channel)))?;
            files.insert(channel.clone(), BufWriter::new(f));
        }
        let w = files.get_mut(&channel).unwrap();
        writeln!(w, "{line}")?;
        w.flush()?;
        Ok(())
    }

    /// Reads every record from a transcript file, or from all `.jsonl` files
    /// under a directory.
    pub fn read_all(path: &Path) -> Result<Vec<TranscriptRecord>, LlmError> {
        let mut files = Vec::new();
        if path.is_dir() {
            collect_jsonl(path, &mut files)?;
            files.sort();
        } else {
            files.push(path.to_path_buf());
        }
        let mut out = Vec::new();
        for f in files {
            for line in fs::read_to_string(&f)?.lines() {
                if !line.trim().is_empty() {
                    out.push(serde_json::from_str(line)?);
                }
            }
        }
        Ok(out)
    }
}

fn collect_jsonl(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_jsonl(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "jsonl") {
            out.push(p);
        }
    }
    Ok(())
}
