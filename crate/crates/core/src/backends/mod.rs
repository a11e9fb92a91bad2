//! Uniform model-invocation contract.
//!
//! A [`ModelBackend`] turns a prompt (plus image reference and decode
//! settings) into text. Three families ship here: deterministic mocks for
//! tests and synthetic studies, a replay backend over logged transcripts,
//! and an HTTP chat-completions client for real servers. Backends must be
//! safe for concurrent invocation.

mod http;
mod mock;
mod replay;

pub use http::{HttpBackendConfig, HttpChatBackend};
pub use mock::{ConstantBackend, GoldBackend, MockConditionalBackend};
pub use replay::{replay_request_key, RecordingBackend, ReplayBackend, ReplayRecord};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::Letter;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("timeout after {0} ms")]
    Timeout(u64),
    #[error("backend refused the request (status {status}): {body}")]
    Refusal { status: u16, body: String },
    #[error("replay miss for request hash {0}")]
    ReplayMiss(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

impl BackendError {
    /// Transport failures and timeouts are retryable; refusals and replay
    /// misses are not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::Timeout(_))
    }
}

/// Decode settings forwarded to the backend.
///
/// `greedy` requires the backend to return the mode of its distribution;
/// the defaults mirror single-token greedy teacher decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub max_new_tokens: u32,
    pub greedy: bool,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 64,
            greedy: true,
            temperature: 1.0,
            top_p: 1.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_new_tokens < 1 {
            return Err(BackendError::InvalidRequest(
                "max_new_tokens must be >= 1".into(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(BackendError::InvalidRequest(
                "temperature must be > 0".into(),
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidRequest("top_p must be in (0,1]".into()));
        }
        Ok(())
    }

    /// Stable string used in replay keys.
    pub fn key_string(&self) -> String {
        format!(
            "max_new_tokens={};greedy={};temperature={};top_p={}",
            self.max_new_tokens, self.greedy, self.temperature, self.top_p
        )
    }
}

/// One invocation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub prompt: String,
    pub image_ref: String,
    pub decode: DecodeConfig,
}

impl ModelRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        self.decode.validate()
    }
}

/// One invocation response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    /// Per-letter probabilities when the backend exposes them; remote
    /// servers usually do not, and nothing downstream requires it.
    pub option_probabilities: Option<BTreeMap<Letter, f64>>,
    pub latency_ms: f64,
    /// Total attempts made (1 unless retries happened).
    pub attempts: u32,
}

impl ModelResponse {
    pub fn from_text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            option_probabilities: None,
            latency_ms: 0.0,
            attempts: 1,
        }
    }

    /// Check the probability-sum invariant when probabilities are present.
    pub fn validate(&self) -> Result<(), BackendError> {
        if let Some(probs) = &self.option_probabilities {
            let sum: f64 = probs.values().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(BackendError::InvalidRequest(format!(
                    "option probabilities sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Model invocation contract. Implementations must be `Send + Sync`.
pub trait ModelBackend: Send + Sync {
    fn invoke(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError>;

    /// Human-readable description written into run logs.
    fn descriptor(&self) -> String;
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn invoke(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).invoke(req)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for Box<B> {
    fn invoke(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).invoke(req)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}
