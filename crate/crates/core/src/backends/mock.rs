//! Deterministic mock backends for tests and synthetic protocol studies.

use std::collections::HashMap;

use rand::Rng;

use super::{BackendError, ModelBackend, ModelRequest, ModelResponse};
use crate::instances::{Letter, VqaInstance};
use crate::prompting::render_letters;
use crate::util::{fnv1a, seeded_rng};

/// Always replies with the same text.
#[derive(Debug, Clone)]
pub struct ConstantBackend {
    pub text: String,
}

impl ConstantBackend {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl ModelBackend for ConstantBackend {
    fn invoke(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        req.validate()?;
        Ok(ModelResponse::from_text(self.text.clone()))
    }

    fn descriptor(&self) -> String {
        format!("constant({:?})", self.text)
    }
}

/// What a prompt is asking for, recovered from its rendered text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PromptKind {
    Joint,
    /// 1-based level of a step prompt.
    Step(usize),
}

/// Prompt-introspection shared by the scripted mocks: looks the instance
/// up by `image_ref` and recognizes which prompt shape it received.
struct InstanceIndex {
    by_image_ref: HashMap<String, VqaInstance>,
}

impl InstanceIndex {
    fn new(instances: &[VqaInstance]) -> Result<Self, BackendError> {
        let mut by_image_ref = HashMap::with_capacity(instances.len());
        for inst in instances {
            if by_image_ref
                .insert(inst.image_ref.clone(), inst.clone())
                .is_some()
            {
                return Err(BackendError::Config(format!(
                    "duplicate image_ref `{}`; mocks key instances by image_ref",
                    inst.image_ref
                )));
            }
        }
        Ok(Self { by_image_ref })
    }

    fn resolve<'a>(
        &'a self,
        req: &ModelRequest,
    ) -> Result<(&'a VqaInstance, PromptKind), BackendError> {
        let inst = self.by_image_ref.get(&req.image_ref).ok_or_else(|| {
            BackendError::InvalidRequest(format!("unknown image_ref `{}`", req.image_ref))
        })?;
        if req.prompt.contains("\nQ1 (level 1): ") {
            return Ok((inst, PromptKind::Joint));
        }
        for q in &inst.per_level {
            let marker = format!("Question (current level): {}\n", q.question_text);
            if req.prompt.contains(&marker) {
                return Ok((inst, PromptKind::Step(q.level_index)));
            }
        }
        Err(BackendError::InvalidRequest(
            "prompt matches no known question of the instance".into(),
        ))
    }
}

/// Answers every question with its gold letter.
pub struct GoldBackend {
    index: InstanceIndex,
}

impl GoldBackend {
    pub fn new(instances: &[VqaInstance]) -> Result<Self, BackendError> {
        Ok(Self {
            index: InstanceIndex::new(instances)?,
        })
    }
}

impl ModelBackend for GoldBackend {
    fn invoke(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        req.validate()?;
        let (inst, kind) = self.index.resolve(req)?;
        let text = match kind {
            PromptKind::Joint => render_letters(&inst.gold_letters()),
            PromptKind::Step(level) => inst.per_level[level - 1].gold_letter.to_string(),
        };
        Ok(ModelResponse::from_text(text))
    }

    fn descriptor(&self) -> String {
        format!("mock_gold(n={})", self.index.by_image_ref.len())
    }
}

/// Stochastic mock whose per-level accuracy depends on whether the prompt
/// carries the correct parent as a known fact.
///
/// On a step prompt for level `l`, the mock answers the gold letter with
/// probability `accuracy_with_parent` when the known-facts line names the
/// gold label of level `l-1`, and with `accuracy_without` otherwise
/// (including level 1 and the independent protocol). When it does not
/// "know" the answer it guesses uniformly over the offered letters, so the
/// realized per-level accuracy carries a uniform-luck correction of
/// `(1 - accuracy) / k` for `k` options.
///
/// A joint prompt simulates the single-pass state collapse this toolkit
/// exists to study: the mock answers level 1 at `accuracy_without` and
/// guesses uniformly at every deeper level, because a single flat pass
/// offers neither known facts nor a focused query to anchor deeper levels.
///
/// Every draw is keyed by `(seed, instance, level, parent-context)`, so
/// results are independent of call order and safe under concurrency.
pub struct MockConditionalBackend {
    index: InstanceIndex,
    accuracy_with_parent: f64,
    accuracy_without: f64,
    seed: u64,
}

impl MockConditionalBackend {
    pub fn new(
        instances: &[VqaInstance],
        accuracy_with_parent: f64,
        accuracy_without: f64,
        seed: u64,
    ) -> Result<Self, BackendError> {
        for (name, acc) in [
            ("accuracy_with_parent", accuracy_with_parent),
            ("accuracy_without", accuracy_without),
        ] {
            if !(0.0..=1.0).contains(&acc) {
                return Err(BackendError::Config(format!("{name} must be in [0,1]")));
            }
        }
        Ok(Self {
            index: InstanceIndex::new(instances)?,
            accuracy_with_parent,
            accuracy_without,
            seed,
        })
    }

    /// Parse `Level k = label` entries from the prompt's known-facts line.
    fn known_facts(prompt: &str) -> Vec<(usize, String)> {
        let Some(line) = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Known facts: "))
        else {
            return Vec::new();
        };
        if line.trim() == "None." {
            return Vec::new();
        }
        let line = line.trim_end_matches('.');
        line.split("; ")
            .filter_map(|entry| {
                let (head, label) = entry.split_once(" = ")?;
                let level: usize = head.strip_prefix("Level ")?.parse().ok()?;
                Some((level, label.to_string()))
            })
            .collect()
    }

    /// Decide one level's letter.
    fn answer_level(
        &self,
        inst: &VqaInstance,
        level: usize,
        knowledge: f64,
        context_tag: u64,
    ) -> Letter {
        let q = &inst.per_level[level - 1];
        let mut rng = seeded_rng(
            self.seed,
            &[
                fnv1a(inst.instance_id.as_bytes()),
                level as u64,
                context_tag,
            ],
        );
        if rng.gen::<f64>() < knowledge {
            q.gold_letter
        } else {
            let i = rng.gen_range(0..q.options.len());
            Letter::from_index(i).expect("<=4 options")
        }
    }
}

impl ModelBackend for MockConditionalBackend {
    fn invoke(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        req.validate()?;
        let (inst, kind) = self.index.resolve(req)?;
        let text = match kind {
            PromptKind::Step(level) => {
                let facts = Self::known_facts(&req.prompt);
                let parent_ok = level > 1
                    && facts.iter().any(|(k, label)| {
                        *k == level - 1 && label == &inst.gold_path.labels[level - 2]
                    });
                let knowledge = if parent_ok {
                    self.accuracy_with_parent
                } else {
                    self.accuracy_without
                };
                self.answer_level(inst, level, knowledge, u64::from(parent_ok))
                    .to_string()
            }
            PromptKind::Joint => {
                let letters: Vec<Letter> = (1..=inst.depth())
                    .map(|level| {
                        let knowledge = if level == 1 { self.accuracy_without } else { 0.0 };
                        self.answer_level(inst, level, knowledge, 2)
                    })
                    .collect();
                render_letters(&letters)
            }
        };
        Ok(ModelResponse::from_text(text))
    }

    fn descriptor(&self) -> String {
        format!(
            "mock_conditional(with={},without={},seed={})",
            self.accuracy_with_parent, self.accuracy_without, self.seed
        )
    }
}
