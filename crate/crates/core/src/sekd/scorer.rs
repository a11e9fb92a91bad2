//! Per-level option scorer with a shared parent-context embedding table.
//!
//! Each level owns a two-layer map: `z = [feature ; parent embedding]`,
//! `h = tanh(W1 z + b1)`, `logits = W2 h + b2`. The post-tanh hidden
//! vector `h` is the anchor feature at that level's decision.
//!
//! The embedding table carries one vector per parent-capable taxonomy
//! label (labels with children), one vector per option letter, and one
//! UNKNOWN vector. The teacher's chain re-injects its committed label; the
//! student's chain re-injects only its own previous letter; both start
//! from UNKNOWN at the root.
//!
//! Parameters live in one flat buffer so the optimizer, serialization, and
//! finite-difference checks all see a single contiguous vector.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{argmax_lowest, softmax};
use super::SekdError;
use crate::scalar::Scalar;

/// Scorer dimensions plus the parent-label vocabulary (sorted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerMeta {
    pub levels: usize,
    pub options: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub parent_labels: Vec<String>,
}

impl ScorerMeta {
    pub fn in_dim(&self) -> usize {
        self.feature_dim + self.embed_dim
    }

    fn level_block(&self) -> usize {
        let h = self.hidden_dim;
        let k = self.options;
        h * self.in_dim() + h + k * h + k
    }

    fn w1_off(&self, level: usize) -> usize {
        level * self.level_block()
    }

    fn b1_off(&self, level: usize) -> usize {
        self.w1_off(level) + self.hidden_dim * self.in_dim()
    }

    fn w2_off(&self, level: usize) -> usize {
        self.b1_off(level) + self.hidden_dim
    }

    fn b2_off(&self, level: usize) -> usize {
        self.w2_off(level) + self.options * self.hidden_dim
    }

    fn labels_off(&self) -> usize {
        self.levels * self.level_block()
    }

    fn letters_off(&self) -> usize {
        self.labels_off() + self.parent_labels.len() * self.embed_dim
    }

    fn unknown_off(&self) -> usize {
        self.letters_off() + self.options * self.embed_dim
    }

    pub fn total_params(&self) -> usize {
        self.unknown_off() + self.embed_dim
    }

    /// Named tensors in flat-buffer order, as (name, shape) pairs.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for l in 0..self.levels {
            out.push((format!("level{l}.w1"), vec![self.hidden_dim, self.in_dim()]));
            out.push((format!("level{l}.b1"), vec![self.hidden_dim]));
            out.push((format!("level{l}.w2"), vec![self.options, self.hidden_dim]));
            out.push((format!("level{l}.b2"), vec![self.options]));
        }
        out.push((
            "embeddings.labels".into(),
            vec![self.parent_labels.len(), self.embed_dim],
        ));
        out.push(("embeddings.letters".into(), vec![self.options, self.embed_dim]));
        out.push(("embeddings.unknown".into(), vec![self.embed_dim]));
        out
    }
}

/// Initialization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub levels: usize,
    pub options: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

/// Parent context fed into one level of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParentSel {
    /// No commitment yet (level 1), or an explicit unknown fact.
    Unknown,
    /// Row into the parent-label embedding table.
    LabelRow(usize),
    /// The scorer's own previously emitted option letter.
    Letter(usize),
}

/// Activations of one level's forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelActivation<T> {
    /// Concatenated input `[feature ; parent embedding]`.
    pub z: Vec<T>,
    /// Post-tanh hidden state; the anchor feature.
    pub h: Vec<T>,
    pub logits: Vec<T>,
}

/// Per-level teacher signal.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSignal<T> {
    /// Option index of the committed choice (letter position).
    pub hard_label: usize,
    pub soft_dist: Vec<T>,
    pub anchor: Vec<T>,
    /// Label text the hard choice maps to; becomes the next known fact.
    pub chosen_label: String,
}

/// Full stepwise teacher output for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillSignals<T> {
    pub per_level: Vec<LevelSignal<T>>,
}

impl<T: Scalar> DistillSignals<T> {
    pub fn hard_labels(&self) -> Vec<usize> {
        self.per_level.iter().map(|s| s.hard_label).collect()
    }

    pub fn soft_dists(&self) -> Vec<Vec<T>> {
        self.per_level.iter().map(|s| s.soft_dist.clone()).collect()
    }

    pub fn anchors(&self) -> Vec<Vec<T>> {
        self.per_level.iter().map(|s| s.anchor.clone()).collect()
    }
}

/// One level of the student's self-conditioned pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentLevel<T> {
    pub parent: ParentSel,
    pub activation: LevelActivation<T>,
    pub soft: Vec<T>,
    pub choice: usize,
}

/// Full single-pass student trace for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentTrace<T> {
    pub per_level: Vec<StudentLevel<T>>,
}

impl<T: Scalar> StudentTrace<T> {
    pub fn choices(&self) -> Vec<usize> {
        self.per_level.iter().map(|l| l.choice).collect()
    }

    pub fn parents(&self) -> Vec<ParentSel> {
        self.per_level.iter().map(|l| l.parent).collect()
    }

    pub fn anchors(&self) -> Vec<Vec<T>> {
        self.per_level
            .iter()
            .map(|l| l.activation.h.clone())
            .collect()
    }

    pub fn softs(&self) -> Vec<Vec<T>> {
        self.per_level.iter().map(|l| l.soft.clone()).collect()
    }
}

/// Flat-backed scorer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams<T> {
    pub meta: ScorerMeta,
    pub data: Vec<T>,
    label_index: HashMap<String, usize>,
}

impl<T: Scalar> ScorerParams<T> {
    /// Random initialization. Weight scales follow 1/sqrt(fan-in);
    /// embeddings start at unit scale; biases at zero.
    pub fn init(config: &ScorerConfig, parent_labels: Vec<String>) -> Self {
        let meta = ScorerMeta {
            levels: config.levels,
            options: config.options,
            feature_dim: config.feature_dim,
            embed_dim: config.embed_dim,
            hidden_dim: config.hidden_dim,
            parent_labels,
        };
        let mut rng = crate::util::seeded_rng(config.seed, &[crate::util::fnv1a(b"scorer-init")]);
        let mut gauss = |scale: f64| -> T {
            // Box-Muller.
            let u1: f64 = rng.gen::<f64>().max(1e-300);
            let u2: f64 = rng.gen();
            T::from_f64c((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * scale)
        };
        let mut data = vec![T::zero(); meta.total_params()];
        let w1_scale = 1.0 / (meta.in_dim() as f64).sqrt();
        let w2_scale = 1.0 / (meta.hidden_dim as f64).sqrt();
        for level in 0..meta.levels {
            for i in 0..meta.hidden_dim * meta.in_dim() {
                data[meta.w1_off(level) + i] = gauss(w1_scale);
            }
            for i in 0..meta.options * meta.hidden_dim {
                data[meta.w2_off(level) + i] = gauss(w2_scale);
            }
        }
        for i in meta.labels_off()..meta.total_params() {
            data[i] = gauss(1.0);
        }
        Self::from_parts(meta, data)
    }

    pub fn from_parts(meta: ScorerMeta, data: Vec<T>) -> Self {
        assert_eq!(data.len(), meta.total_params(), "flat buffer size");
        let label_index = meta
            .parent_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Self {
            meta,
            data,
            label_index,
        }
    }

    pub fn label_row(&self, label: &str) -> Result<usize, SekdError> {
        self.label_index
            .get(label)
            .copied()
            .ok_or_else(|| SekdError::UnknownLabel(label.to_string()))
    }

    pub fn w1(&self, level: usize) -> &[T] {
        let o = self.meta.w1_off(level);
        &self.data[o..o + self.meta.hidden_dim * self.meta.in_dim()]
    }

    pub fn b1(&self, level: usize) -> &[T] {
        let o = self.meta.b1_off(level);
        &self.data[o..o + self.meta.hidden_dim]
    }

    pub fn w2(&self, level: usize) -> &[T] {
        let o = self.meta.w2_off(level);
        &self.data[o..o + self.meta.options * self.meta.hidden_dim]
    }

    pub fn b2(&self, level: usize) -> &[T] {
        let o = self.meta.b2_off(level);
        &self.data[o..o + self.meta.options]
    }

    pub fn embedding(&self, parent: &ParentSel) -> &[T] {
        let m = self.meta.embed_dim;
        let off = match parent {
            ParentSel::Unknown => self.meta.unknown_off(),
            ParentSel::LabelRow(row) => self.meta.labels_off() + row * m,
            ParentSel::Letter(letter) => self.meta.letters_off() + letter * m,
        };
        &self.data[off..off + m]
    }

    /// Flat offset of the embedding fed by a parent selection; the
    /// gradient sink for that level's input.
    pub(super) fn embedding_offset(&self, parent: &ParentSel) -> usize {
        match parent {
            ParentSel::Unknown => self.meta.unknown_off(),
            ParentSel::LabelRow(row) => self.meta.labels_off() + row * self.meta.embed_dim,
            ParentSel::Letter(letter) => self.meta.letters_off() + letter * self.meta.embed_dim,
        }
    }

    pub(super) fn w1_offset(&self, level: usize) -> usize {
        self.meta.w1_off(level)
    }

    pub(super) fn b1_offset(&self, level: usize) -> usize {
        self.meta.b1_off(level)
    }

    pub(super) fn w2_offset(&self, level: usize) -> usize {
        self.meta.w2_off(level)
    }

    pub(super) fn b2_offset(&self, level: usize) -> usize {
        self.meta.b2_off(level)
    }

    /// One level's forward pass under an explicit parent context.
    pub fn level_forward(
        &self,
        level: usize,
        feature: &[T],
        parent: &ParentSel,
    ) -> LevelActivation<T> {
        let meta = &self.meta;
        debug_assert_eq!(feature.len(), meta.feature_dim);
        let emb = self.embedding(parent);
        let mut z = Vec::with_capacity(meta.in_dim());
        z.extend_from_slice(feature);
        z.extend_from_slice(emb);

        let w1 = self.w1(level);
        let b1 = self.b1(level);
        let mut h = Vec::with_capacity(meta.hidden_dim);
        for row in 0..meta.hidden_dim {
            let mut acc = b1[row];
            let base = row * meta.in_dim();
            for (j, &zj) in z.iter().enumerate() {
                acc += w1[base + j] * zj;
            }
            h.push(acc.tanh());
        }

        let w2 = self.w2(level);
        let b2 = self.b2(level);
        let mut logits = Vec::with_capacity(meta.options);
        for row in 0..meta.options {
            let mut acc = b2[row];
            let base = row * meta.hidden_dim;
            for (j, &hj) in h.iter().enumerate() {
                acc += w2[base + j] * hj;
            }
            logits.push(acc);
        }
        LevelActivation { z, h, logits }
    }

    /// Run the whole chain under explicit per-level parent contexts.
    pub fn forward_chain(
        &self,
        feature: &[T],
        parents: &[ParentSel],
    ) -> Result<Vec<LevelActivation<T>>, SekdError> {
        let mut out = Vec::with_capacity(parents.len());
        for (level, parent) in parents.iter().enumerate() {
            let act = self.level_forward(level, feature, parent);
            if act.logits.iter().any(|l| !l.is_finite()) {
                return Err(SekdError::NonFinite("level logits"));
            }
            out.push(act);
        }
        Ok(out)
    }

    /// Stepwise conditioned pass: greedy selection per level, committing
    /// the chosen option's label text as the next level's parent context.
    /// `options` carries each level's option labels in letter order.
    pub fn teacher_forward(
        &self,
        feature: &[T],
        options: &[Vec<String>],
    ) -> Result<DistillSignals<T>, SekdError> {
        if options.len() != self.meta.levels {
            return Err(SekdError::DimensionMismatch(format!(
                "{} option sets for {} levels",
                options.len(),
                self.meta.levels
            )));
        }
        let mut parent = ParentSel::Unknown;
        let mut per_level = Vec::with_capacity(self.meta.levels);
        for (level, level_options) in options.iter().enumerate() {
            let act = self.level_forward(level, feature, &parent);
            if act.logits.iter().any(|l| !l.is_finite()) {
                return Err(SekdError::NonFinite("teacher logits"));
            }
            let soft = softmax(&act.logits, T::one());
            let hard = argmax_lowest(&soft);
            let chosen_label = level_options[hard].clone();
            parent = ParentSel::LabelRow(self.label_row(&chosen_label)?);
            per_level.push(LevelSignal {
                hard_label: hard,
                soft_dist: soft,
                anchor: act.h,
                chosen_label,
            });
        }
        Ok(DistillSignals { per_level })
    }

    /// Single-pass joint decoding: greedy selection per level, feeding
    /// only the previously emitted letter forward. Level 1 sees the same
    /// UNKNOWN context as the teacher's level 1, so the two passes agree
    /// at the root for identical parameters.
    pub fn student_forward(&self, feature: &[T]) -> Result<StudentTrace<T>, SekdError> {
        let mut parent = ParentSel::Unknown;
        let mut per_level = Vec::with_capacity(self.meta.levels);
        for level in 0..self.meta.levels {
            let act = self.level_forward(level, feature, &parent);
            if act.logits.iter().any(|l| !l.is_finite()) {
                return Err(SekdError::NonFinite("student logits"));
            }
            let soft = softmax(&act.logits, T::one());
            let choice = argmax_lowest(&soft);
            per_level.push(StudentLevel {
                parent,
                activation: act,
                soft,
                choice,
            });
            parent = ParentSel::Letter(choice);
        }
        Ok(StudentTrace { per_level })
    }
}

/// Linear projector mapping student anchors into the teacher space.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector<T> {
    pub dim: usize,
    /// Row-major `dim x dim`.
    pub data: Vec<T>,
}

impl<T: Scalar> Projector<T> {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![T::zero(); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = T::one();
        }
        Self { dim, data }
    }

    pub fn apply(&self, h: &[T]) -> Vec<T> {
        debug_assert_eq!(h.len(), self.dim);
        let mut out = Vec::with_capacity(self.dim);
        for row in 0..self.dim {
            let base = row * self.dim;
            let mut acc = T::zero();
            for (j, &hj) in h.iter().enumerate() {
                acc += self.data[base + j] * hj;
            }
            out.push(acc);
        }
        out
    }
}
