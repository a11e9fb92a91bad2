//! HTTP chat-completions client.
//!
//! POSTs `{base_url}/chat/completions` with one user message carrying the
//! prompt text and an image reference. Servers that ignore images still
//! work. Retryable failures (transport errors, timeouts, 408/429/5xx) are
//! retried with exponential backoff up to a configured cap; refusals
//! (other 4xx) fail immediately. A semaphore enforces the in-flight cap.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendError, ModelBackend, ModelRequest, ModelResponse};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. The
    /// token value itself is never echoed into logs or run headers.
    pub api_key_env: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key_env: None,
            timeout_ms: 60_000,
            max_retries: 3,
            initial_backoff_ms: 250,
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore; `std` has no stable one.
struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut p = self.permits.lock().expect("gate lock");
        while *p == 0 {
            p = self.cv.wait(p).expect("gate wait");
        }
        *p -= 1;
    }

    fn release(&self) {
        *self.permits.lock().expect("gate lock") += 1;
        self.cv.notify_one();
    }
}

pub struct HttpChatBackend {
    config: HttpBackendConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpChatBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let token = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable `{var}` is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let gate = Gate::new(config.max_in_flight);
        Ok(Self {
            config,
            token,
            client,
            gate,
        })
    }

    fn body(&self, req: &ModelRequest) -> serde_json::Value {
        // Greedy decoding maps to temperature 0 on chat servers.
        let temperature = if req.decode.greedy {
            0.0
        } else {
            req.decode.temperature
        };
        json!({
            "model": self.config.model,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": req.prompt},
                    {"type": "image_url", "image_url": {"url": req.image_ref}},
                ],
            }],
            "temperature": temperature,
            "top_p": req.decode.top_p,
            "max_tokens": req.decode.max_new_tokens,
        })
    }

    fn attempt(&self, req: &ModelRequest) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut builder = self.client.post(&url).json(&self.body(req));
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(self.config.timeout_ms)
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if status.is_success() {
            return extract_content(&text);
        }
        let code = status.as_u16();
        if code == 408 || code == 429 || status.is_server_error() {
            Err(BackendError::Transport(format!("http status {code}")))
        } else {
            Err(BackendError::Refusal {
                status: code,
                body: text,
            })
        }
    }
}

/// Pull `choices[0].message.content` out of a chat-completions body;
/// content may be a plain string or an array of typed parts.
fn extract_content(body: &str) -> Result<String, BackendError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| BackendError::Transport(format!("unparseable response body: {e}")))?;
    let content = value
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::Transport("response body has no message content".into()))?;
    match content {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(|t| t.as_str()))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(BackendError::Transport(format!(
            "unexpected content shape: {other}"
        ))),
    }
}

impl ModelBackend for HttpChatBackend {
    fn invoke(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        req.validate()?;
        self.gate.acquire();
        let outcome = (|| {
            let start = Instant::now();
            let mut attempts = 0u32;
            loop {
                attempts += 1;
                match self.attempt(req) {
                    Ok(text) => {
                        return Ok(ModelResponse {
                            text,
                            option_probabilities: None,
                            latency_ms: start.elapsed().as_secs_f64() * 1e3,
                            attempts,
                        })
                    }
                    Err(e) if e.is_retryable() && attempts <= self.config.max_retries => {
                        let backoff = self
                            .config
                            .initial_backoff_ms
                            .saturating_mul(1u64 << (attempts - 1).min(16));
                        std::thread::sleep(Duration::from_millis(backoff));
                    }
                    Err(e) => return Err(e),
                }
            }
        })();
        self.gate.release();
        outcome
    }

    fn descriptor(&self) -> String {
        format!("http({}, model={})", self.config.base_url, self.config.model)
    }
}
