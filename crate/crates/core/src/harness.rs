//! Protocol execution over an instance set.
//!
//! Three protocols are supported:
//!
//! - joint: one call per instance; the model emits every level's letter in
//!   a single turn;
//! - independent: one call per level with no cross-level conditioning;
//! - conditioned: one call per level, each carrying the model's own prior
//!   predicted labels as known facts. A level that failed to parse
//!   propagates the literal `UNKNOWN` fact and the chain continues.
//!
//! Instances run with bounded parallelism; within one instance the
//! conditioned chain is strictly sequential. Records are keyed and sorted
//! by instance id, so log assembly is order-independent.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, DecodeConfig, ModelBackend, ModelRequest};
use crate::instances::{Letter, VqaInstance};
use crate::prompting::{
    build_joint_prompt, build_step_prompt, parse_joint_answer_with, parse_step_answer_with,
    ParseOptions, UNKNOWN_FACT,
};
use crate::util::{fnv1a, unix_millis};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no instances to run")]
    EmptyInstanceSet,
    #[error("prompt error: {0}")]
    Prompt(#[from] crate::prompting::PromptError),
    #[error("malformed run log: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Joint,
    Independent,
    Conditioned,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Protocol::Joint => "joint",
            Protocol::Independent => "independent",
            Protocol::Conditioned => "conditioned",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(Protocol::Joint),
            "independent" => Ok(Protocol::Independent),
            "conditioned" => Ok(Protocol::Conditioned),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// One prompt/response exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub prompt: String,
    pub response: String,
}

/// Per-sample predictions under one protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub protocol: Protocol,
    #[serde(with = "crate::instances::letter_slot")]
    pub predicted_letters: Vec<Option<Letter>>,
    pub predicted_labels: Vec<Option<String>>,
    /// `correct_mask[l]` is true iff the predicted label at level `l+1`
    /// equals the gold label; FAIL entries are always false.
    pub correct_mask: Vec<bool>,
    pub transcripts: Vec<Transcript>,
    /// First backend error encountered, if any.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub run_id: String,
    pub protocol: Protocol,
    pub backend: String,
    pub decode: DecodeConfig,
    pub seed: u64,
    /// Full resolved configuration that produced this run.
    pub config: serde_json::Value,
    /// Wall-clock timestamp; excluded from determinism comparisons.
    pub created_unix_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_records: usize,
    pub backend_calls: u64,
    pub backend_attempts: u64,
    /// Wall-clock duration; excluded from determinism comparisons.
    pub wall_clock_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<PredictionRecord>,
    pub summary: RunSummary,
}

impl RunLog {
    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.records.iter().map(|r| r.correct_mask.clone()).collect()
    }
}

/// Runner options.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
    /// Cross-instance parallelism cap.
    pub concurrency: usize,
    pub parse: ParseOptions,
    /// Ablation only: feed gold labels (not the model's own predictions)
    /// as known facts in the conditioned protocol.
    pub gold_teacher_forcing: bool,
    /// Configuration echoed into the run header.
    pub config_echo: serde_json::Value,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            concurrency: 1,
            parse: ParseOptions::default(),
            gold_teacher_forcing: false,
            config_echo: serde_json::Value::Null,
        }
    }
}

struct CallCounter {
    calls: AtomicU64,
    attempts: AtomicU64,
}

fn letters_to_labels(
    instance: &VqaInstance,
    letters: &[Option<Letter>],
) -> (Vec<Option<String>>, Vec<bool>) {
    let mut labels = Vec::with_capacity(letters.len());
    let mut mask = Vec::with_capacity(letters.len());
    for (idx, slot) in letters.iter().enumerate() {
        // A letter beyond the rendered option count is a FAIL at that level.
        let label = slot
            .and_then(|l| instance.per_level[idx].label_for(l))
            .map(str::to_string);
        let correct = label.as_deref() == Some(&instance.gold_path.labels[idx]);
        labels.push(label);
        mask.push(correct);
    }
    (labels, mask)
}

fn run_one(
    protocol: Protocol,
    instance: &VqaInstance,
    backend: &dyn ModelBackend,
    decode: &DecodeConfig,
    options: &RunOptions,
    counter: &CallCounter,
) -> PredictionRecord {
    let depth = instance.depth();
    let mut transcripts = Vec::new();
    let mut error: Option<String> = None;
    let mut letters: Vec<Option<Letter>> = Vec::with_capacity(depth);

    let mut call = |prompt: String| -> Result<String, BackendError> {
        counter.calls.fetch_add(1, Ordering::Relaxed);
        let req = ModelRequest {
            prompt: prompt.clone(),
            image_ref: instance.image_ref.clone(),
            decode: decode.clone(),
        };
        match backend.invoke(&req) {
            Ok(resp) => {
                counter
                    .attempts
                    .fetch_add(u64::from(resp.attempts), Ordering::Relaxed);
                transcripts.push(Transcript {
                    prompt,
                    response: resp.text.clone(),
                });
                Ok(resp.text)
            }
            Err(e) => {
                counter.attempts.fetch_add(1, Ordering::Relaxed);
                transcripts.push(Transcript {
                    prompt,
                    response: format!("<error: {e}>"),
                });
                Err(e)
            }
        }
    };

    match protocol {
        Protocol::Joint => {
            let bundle = build_joint_prompt(instance);
            match call(bundle.text) {
                Ok(text) => {
                    letters = parse_joint_answer_with(&text, depth, options.parse).letters;
                }
                Err(e) => {
                    error = Some(e.to_string());
                    letters = vec![None; depth];
                }
            }
        }
        Protocol::Independent => {
            for level in 1..=depth {
                let bundle = build_step_prompt(instance, level, &[]).expect("level in range");
                match call(bundle.text) {
                    Ok(text) => {
                        letters.push(parse_step_answer_with(&text, options.parse).letters[0]);
                    }
                    Err(e) => {
                        if error.is_none() {
                            error = Some(e.to_string());
                        }
                        letters.push(None);
                    }
                }
            }
        }
        Protocol::Conditioned => {
            let mut priors: Vec<String> = Vec::with_capacity(depth.saturating_sub(1));
            for level in 1..=depth {
                let bundle =
                    build_step_prompt(instance, level, &priors).expect("priors match level");
                let letter = match call(bundle.text) {
                    Ok(text) => parse_step_answer_with(&text, options.parse).letters[0],
                    Err(e) => {
                        if error.is_none() {
                            error = Some(e.to_string());
                        }
                        None
                    }
                };
                letters.push(letter);
                if level < depth {
                    let fact = if options.gold_teacher_forcing {
                        instance.gold_path.labels[level - 1].clone()
                    } else {
                        letter
                            .and_then(|l| instance.per_level[level - 1].label_for(l))
                            .unwrap_or(UNKNOWN_FACT)
                            .to_string()
                    };
                    priors.push(fact);
                }
            }
        }
    }

    let (predicted_labels, correct_mask) = letters_to_labels(instance, &letters);
    PredictionRecord {
        instance_id: instance.instance_id.clone(),
        protocol,
        predicted_letters: letters,
        predicted_labels,
        correct_mask,
        transcripts,
        error,
    }
}

/// Execute `protocol` over every instance against `backend`.
pub fn run_protocol(
    protocol: Protocol,
    instances: &[VqaInstance],
    backend: &dyn ModelBackend,
    decode: &DecodeConfig,
    options: &RunOptions,
) -> Result<RunLog, HarnessError> {
    if instances.is_empty() {
        return Err(HarnessError::EmptyInstanceSet);
    }
    let started = std::time::Instant::now();
    let counter = CallCounter {
        calls: AtomicU64::new(0),
        attempts: AtomicU64::new(0),
    };

    let mut records: Vec<PredictionRecord> = if options.concurrency <= 1 {
        instances
            .iter()
            .map(|inst| run_one(protocol, inst, backend, decode, options, &counter))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.concurrency)
            .build()
            .expect("thread pool");
        pool.install(|| {
            use rayon::prelude::*;
            instances
                .par_iter()
                .map(|inst| run_one(protocol, inst, backend, decode, options, &counter))
                .collect()
        })
    };
    records.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));

    let run_id = format!(
        "{:016x}",
        fnv1a(
            format!(
                "{}|{}|{}|{}|{}",
                protocol,
                backend.descriptor(),
                decode.key_string(),
                options.seed,
                instances.len()
            )
            .as_bytes()
        )
    );
    Ok(RunLog {
        header: RunHeader {
            run_id,
            protocol,
            backend: backend.descriptor(),
            decode: decode.clone(),
            seed: options.seed,
            config: options.config_echo.clone(),
            created_unix_ms: unix_millis(),
        },
        records,
        summary: RunSummary {
            n_records: instances.len(),
            backend_calls: counter.calls.into_inner(),
            backend_attempts: counter.attempts.into_inner(),
            wall_clock_ms: started.elapsed().as_millis(),
        },
    })
}

pub fn run_joint(
    instances: &[VqaInstance],
    backend: &dyn ModelBackend,
    decode: &DecodeConfig,
    options: &RunOptions,
) -> Result<RunLog, HarnessError> {
    run_protocol(Protocol::Joint, instances, backend, decode, options)
}

pub fn run_independent(
    instances: &[VqaInstance],
    backend: &dyn ModelBackend,
    decode: &DecodeConfig,
    options: &RunOptions,
) -> Result<RunLog, HarnessError> {
    run_protocol(Protocol::Independent, instances, backend, decode, options)
}

pub fn run_conditioned(
    instances: &[VqaInstance],
    backend: &dyn ModelBackend,
    decode: &DecodeConfig,
    options: &RunOptions,
) -> Result<RunLog, HarnessError> {
    run_protocol(Protocol::Conditioned, instances, backend, decode, options)
}

/// Persist a run log as newline-delimited JSON: a header line, one line
/// per record, and a trailing summary line.
pub fn write_run_log<W: Write>(mut w: W, log: &RunLog) -> Result<(), HarnessError> {
    let header = serde_json::json!({"type": "header", "header": log.header});
    writeln!(w, "{header}")?;
    for record in &log.records {
        let line = serde_json::json!({"type": "record", "record": record});
        writeln!(w, "{line}")?;
    }
    let summary = serde_json::json!({"type": "summary", "summary": log.summary});
    writeln!(w, "{summary}")?;
    Ok(())
}

pub fn read_run_log<R: BufRead>(r: R) -> Result<RunLog, HarnessError> {
    let mut header: Option<RunHeader> = None;
    let mut summary: Option<RunSummary> = None;
    let mut records = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| HarnessError::Malformed(e.to_string()))?;
        match value.get("type").and_then(|t| t.as_str()) {
            Some("header") => {
                header = Some(
                    serde_json::from_value(value["header"].clone())
                        .map_err(|e| HarnessError::Malformed(e.to_string()))?,
                );
            }
            Some("record") => {
                records.push(
                    serde_json::from_value(value["record"].clone())
                        .map_err(|e| HarnessError::Malformed(e.to_string()))?,
                );
            }
            Some("summary") => {
                summary = Some(
                    serde_json::from_value(value["summary"].clone())
                        .map_err(|e| HarnessError::Malformed(e.to_string()))?,
                );
            }
            other => {
                return Err(HarnessError::Malformed(format!(
                    "unknown record type {other:?}"
                )))
            }
        }
    }
    Ok(RunLog {
        header: header.ok_or_else(|| HarnessError::Malformed("missing header".into()))?,
        summary: summary.ok_or_else(|| HarnessError::Malformed("missing summary".into()))?,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ConstantBackend, GoldBackend, MockConditionalBackend};
    use crate::instances::{generate_instances, SamplerPolicy};
    use crate::taxonomy::synthetic_tree;

    fn gen_instances(n: usize, levels: usize) -> Vec<VqaInstance> {
        let tree = synthetic_tree("gen", levels, 4).unwrap();
        generate_instances(&tree, n, &SamplerPolicy::Uniform, 3).unwrap()
    }

    #[test]
    fn gold_backend_scores_perfectly_under_every_protocol() {
        let instances = gen_instances(12, 3);
        let backend = GoldBackend::new(&instances).unwrap();
        let decode = DecodeConfig::default();
        let options = RunOptions::default();
        for protocol in [Protocol::Joint, Protocol::Independent, Protocol::Conditioned] {
            let log = run_protocol(protocol, &instances, &backend, &decode, &options).unwrap();
            assert!(log
                .records
                .iter()
                .all(|r| r.correct_mask.iter().all(|&c| c)));
        }
    }

    #[test]
    fn call_accounting_matches_protocol_shape() {
        let instances = gen_instances(7, 4);
        let backend = GoldBackend::new(&instances).unwrap();
        let decode = DecodeConfig::default();
        let options = RunOptions::default();
        let joint = run_joint(&instances, &backend, &decode, &options).unwrap();
        assert_eq!(joint.summary.backend_calls, 7);
        assert!(joint.records.iter().all(|r| r.transcripts.len() == 1));

        let total_levels: u64 = instances.iter().map(|i| i.depth() as u64).sum();
        let independent = run_independent(&instances, &backend, &decode, &options).unwrap();
        assert_eq!(independent.summary.backend_calls, total_levels);
        let conditioned = run_conditioned(&instances, &backend, &decode, &options).unwrap();
        assert_eq!(conditioned.summary.backend_calls, total_levels);
    }

    #[test]
    fn constant_a_backend_hits_chance_per_level() {
        // Gold letters are uniform over the four options, so a backend that
        // always answers "A A A ..." lands near 25% at four-option levels.
        let instances = gen_instances(2000, 3);
        let reply = "A A A A";
        let backend = ConstantBackend::new(reply);
        let log = run_joint(
            &instances,
            &backend,
            &DecodeConfig::default(),
            &RunOptions::default(),
        )
        .unwrap();
        let mut correct = 0usize;
        let mut total = 0usize;
        for (record, inst) in log.records.iter().zip(&instances) {
            for (idx, &c) in record.correct_mask.iter().enumerate() {
                if inst.per_level[idx].options.len() == 4 {
                    correct += usize::from(c);
                    total += 1;
                }
            }
        }
        let acc = correct as f64 / total as f64;
        assert!((acc - 0.25).abs() < 0.03, "per-level accuracy {acc}");
    }

    #[test]
    fn conditioned_prompt_carries_previous_prediction_verbatim() {
        let instances = gen_instances(3, 3);
        let backend = GoldBackend::new(&instances).unwrap();
        let log = run_conditioned(
            &instances,
            &backend,
            &DecodeConfig::default(),
            &RunOptions::default(),
        )
        .unwrap();
        for (record, inst) in log.records.iter().zip(&instances) {
            let level3_prompt = &record.transcripts[2].prompt;
            let level2_label = record.predicted_labels[1].as_deref().unwrap();
            assert!(level3_prompt.contains(&format!("Level 2 = {level2_label}")));
            assert_eq!(level2_label, inst.gold_path.labels[1]);
        }
    }

    #[test]
    fn parse_failures_propagate_unknown_and_continue() {
        let instances = gen_instances(2, 3);
        // Replies with no valid letter at all.
        let backend = ConstantBackend::new("no answer");
        let log = run_conditioned(
            &instances,
            &backend,
            &DecodeConfig::default(),
            &RunOptions::default(),
        )
        .unwrap();
        for record in &log.records {
            assert!(record.predicted_letters.iter().all(|l| l.is_none()));
            assert!(record.correct_mask.iter().all(|&c| !c));
            assert!(record.transcripts[1]
                .prompt
                .contains(&format!("Level 1 = {UNKNOWN_FACT}")));
            // The run continued to every level.
            assert_eq!(record.transcripts.len(), 4);
        }
    }

    #[test]
    fn conditioned_beats_independent_under_parent_coupling() {
        let instances = gen_instances(400, 4);
        let backend = MockConditionalBackend::new(&instances, 0.95, 0.55, 11).unwrap();
        let decode = DecodeConfig::default();
        let options = RunOptions::default();
        let ind = run_independent(&instances, &backend, &decode, &options).unwrap();
        let cond = run_conditioned(&instances, &backend, &decode, &options).unwrap();
        let hca = |log: &RunLog| {
            log.records
                .iter()
                .filter(|r| r.correct_mask.iter().all(|&c| c))
                .count() as f64
                / log.records.len() as f64
        };
        assert!(
            hca(&cond) > hca(&ind),
            "conditioned {} <= independent {}",
            hca(&cond),
            hca(&ind)
        );
    }

    #[test]
    fn runs_are_reproducible_and_order_independent() {
        let instances = gen_instances(40, 3);
        let backend = MockConditionalBackend::new(&instances, 0.9, 0.6, 17).unwrap();
        let decode = DecodeConfig::default();
        let seq = RunOptions {
            concurrency: 1,
            ..RunOptions::default()
        };
        let par = RunOptions {
            concurrency: 4,
            ..RunOptions::default()
        };
        let a = run_conditioned(&instances, &backend, &decode, &seq).unwrap();
        let b = run_conditioned(&instances, &backend, &decode, &par).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn run_log_roundtrip() {
        let instances = gen_instances(4, 3);
        let backend = GoldBackend::new(&instances).unwrap();
        let log = run_joint(
            &instances,
            &backend,
            &DecodeConfig::default(),
            &RunOptions::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_run_log(&mut buf, &log).unwrap();
        let back = read_run_log(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(back, log);
    }
}
