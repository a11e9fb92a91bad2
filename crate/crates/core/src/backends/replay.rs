//! Replay of logged transcripts, plus a recording wrapper that produces
//! the logs.
//!
//! A replay log is newline-delimited JSON with records
//! `{request_hash, prompt, text}`; requests are keyed by a stable hash of
//! `(prompt, image_ref, decode)`. A request absent from the log raises a
//! replay miss rather than fabricating output.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ModelBackend, ModelRequest, ModelResponse};
use crate::util::fnv1a;

/// Stable key for a request: hex FNV-1a over prompt, image_ref, and the
/// decode configuration.
pub fn replay_request_key(req: &ModelRequest) -> String {
    let material = format!(
        "{}\u{1}{}\u{1}{}",
        req.prompt,
        req.image_ref,
        req.decode.key_string()
    );
    format!("{:016x}", fnv1a(material.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub request_hash: String,
    pub prompt: String,
    pub text: String,
}

/// Serves logged responses; raises [`BackendError::ReplayMiss`] otherwise.
pub struct ReplayBackend {
    responses: HashMap<String, String>,
    source: String,
}

impl ReplayBackend {
    pub fn from_reader<R: BufRead>(r: R, source: &str) -> Result<Self, BackendError> {
        let mut responses = HashMap::new();
        for line in r.lines() {
            let line = line.map_err(|e| BackendError::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line)
                .map_err(|e| BackendError::Config(format!("bad replay record: {e}")))?;
            responses.insert(rec.request_hash, rec.text);
        }
        Ok(Self {
            responses,
            source: source.to_string(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path).map_err(|e| BackendError::Config(e.to_string()))?;
        Self::from_reader(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ModelBackend for ReplayBackend {
    fn invoke(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        req.validate()?;
        let key = replay_request_key(req);
        match self.responses.get(&key) {
            Some(text) => Ok(ModelResponse::from_text(text.clone())),
            None => Err(BackendError::ReplayMiss(key)),
        }
    }

    fn descriptor(&self) -> String {
        format!("replay({}, n={})", self.source, self.responses.len())
    }
}

/// Wraps a backend and tees every successful exchange into a replay log.
pub struct RecordingBackend<B, W: Write> {
    inner: B,
    writer: Mutex<W>,
}

impl<B: ModelBackend, W: Write + Send> RecordingBackend<B, W> {
    pub fn new(inner: B, writer: W) -> Self {
        Self {
            inner,
            writer: Mutex::new(writer),
        }
    }

    pub fn into_inner(self) -> (B, W) {
        (self.inner, self.writer.into_inner().expect("writer lock"))
    }
}

impl<B: ModelBackend, W: Write + Send> ModelBackend for RecordingBackend<B, W> {
    fn invoke(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let resp = self.inner.invoke(req)?;
        let record = ReplayRecord {
            request_hash: replay_request_key(req),
            prompt: req.prompt.clone(),
            text: resp.text.clone(),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        let mut w = self.writer.lock().expect("writer lock");
        writeln!(w, "{line}").map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(resp)
    }

    fn descriptor(&self) -> String {
        format!("recording({})", self.inner.descriptor())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ConstantBackend, DecodeConfig};

    fn request(prompt: &str) -> ModelRequest {
        ModelRequest {
            prompt: prompt.into(),
            image_ref: "img://1".into(),
            decode: DecodeConfig::default(),
        }
    }

    #[test]
    fn record_then_replay_round_trips() {
        let recorder = RecordingBackend::new(ConstantBackend::new("B"), Vec::new());
        let req = request("pick one");
        recorder.invoke(&req).unwrap();
        let (_, log) = recorder.into_inner();

        let replay = ReplayBackend::from_reader(log.as_slice(), "mem").unwrap();
        assert_eq!(replay.len(), 1);
        let resp = replay.invoke(&req).unwrap();
        assert_eq!(resp.text, "B");
    }

    #[test]
    fn miss_raises_rather_than_fabricating() {
        let replay = ReplayBackend::from_reader(&b""[..], "mem").unwrap();
        let err = replay.invoke(&request("never seen")).unwrap_err();
        assert!(matches!(err, BackendError::ReplayMiss(_)));
        assert!(!err.is_retryable());
    }

    #[test]
    fn key_depends_on_decode_config() {
        let a = replay_request_key(&request("p"));
        let mut req = request("p");
        req.decode.max_new_tokens = 1;
        let b = replay_request_key(&req);
        assert_ne!(a, b);
    }
}
