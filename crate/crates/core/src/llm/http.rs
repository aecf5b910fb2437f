use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::{Backend, CompletionConfig, CompletionRequest, LlmError};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("http status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("connection: {0}")]
    Io(String),
    #[error("bad response body: {0}")]
    Body(String),
}

impl TransportError {
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => matches!(code, 408 | 409 | 429) || *code >= 500,
            TransportError::Io(_) => true,
            TransportError::Body(_) => false,
        }
    }
}

/// One JSON POST. Swappable so tests can count and fail calls.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<Value, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout_secs: u64) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<Value, TransportError> {
        let mut req = self.agent.post(url);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send_json(body).map_err(|e| TransportError::Io(e.to_string()))?;
        let code = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Io(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(TransportError::Status { code, body: text });
        }
        serde_json::from_str(&text).map_err(|e| TransportError::Body(e.to_string()))
    }
}

/// Counting semaphore that also remembers the highest count it reached.
#[derive(Debug)]
pub struct InflightLimiter {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

pub struct InflightGuard<'a> {
    limiter: &'a InflightLimiter,
}

impl InflightLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn acquire(&self) -> InflightGuard<'_> {
        let mut n = self.current.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        self.peak.fetch_max(*n, Ordering::SeqCst);
        InflightGuard { limiter: self }
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.current.lock().unwrap();
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Chat-completion client: `{model, messages, max_tokens, temperature,
/// top_p, top_k}` in, `choices[0].message.content` out.
pub struct HttpBackend<T: Transport> {
    config: CompletionConfig,
    transport: T,
    limiter: InflightLimiter,
}

impl<T: Transport> HttpBackend<T> {
    pub fn new(config: CompletionConfig, transport: T) -> Self {
        let limiter = InflightLimiter::new(config.max_inflight);
        Self {
            config,
            transport,
            limiter,
        }
    }

    pub fn limiter(&self) -> &InflightLimiter {
        &self.limiter
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let c = &self.config;
        json!({
            "model": c.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "max_tokens": c.max_tokens,
            "temperature": c.temperature,
            "top_p": c.top_p,
            "top_k": c.top_k,
        })
    }

    fn headers(&self) -> Vec<(String, String)> {
        let mut h = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            if !key.is_empty() {
                h.push(("Authorization".to_string(), format!("Bearer {key}")));
            }
        }
        h
    }
}

/// Text from either an OpenAI-style or a content-block response.
pub(crate) fn response_text(v: &Value) -> Option<String> {
    if let Some(s) = v.pointer("/choices/0/message/content").and_then(Value::as_str) {
        return Some(s.to_string());
    }
    if let Some(blocks) = v.get("content").and_then(Value::as_array) {
        let text: String = blocks
            .iter()
            .filter_map(|b| b.get("text").and_then(Value::as_str))
            .collect();
        if !text.is_empty() {
            return Some(text);
        }
    }
    v.get("text").and_then(Value::as_str).map(str::to_string)
}

impl<T: Transport> Backend for HttpBackend<T> {
    fn name(&self) -> &'static str {
        "http"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let url = self.config.endpoint.as_deref().unwrap_or_default();
        let body = self.request_body(request);
        let headers = self.headers();
        let attempts = self.config.retry.attempts.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.retry.delay_before_retry(attempt - 1));
            }
            let result = {
                let _slot = self.limiter.acquire();
                self.transport.post_json(url, &headers, &body)
            };
            match result {
                Ok(v) => {
                    return response_text(&v).ok_or_else(|| LlmError::MalformedResponse(v.to_string()));
                }
                Err(e) => {
                    tracing::warn!(step = %request.step_id, attempt, error = %e, "completion request failed");
                    let transient = e.is_transient();
                    last_error = e.to_string();
                    if !transient {
                        return Err(LlmError::BackendUnavailable {
                            attempts: attempt + 1,
                            last_error,
                        });
                    }
                }
            }
        }
        Err(LlmError::BackendUnavailable { attempts, last_error })
    }
}
