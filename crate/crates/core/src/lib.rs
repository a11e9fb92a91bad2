//! Toolkit for hierarchical multiple-choice VQA over fixed taxonomy trees.
//!
//! The crate bundles everything needed to diagnose and repair path
//! consistency in hierarchical visual question answering:
//!
//! - [`taxonomy`]: rooted taxonomy trees, validation, root-to-leaf paths;
//! - [`instances`]: per-image ladders of four-choice questions with
//!   pluggable distractor samplers;
//! - [`prompting`]: joint and conditioned-step prompt rendering plus
//!   letter parsing of model outputs;
//! - [`backends`]: a uniform model-invocation contract with mock, replay,
//!   and HTTP chat implementations;
//! - [`harness`]: the three inference protocols (joint invocation,
//!   independent levels, conditioned steps) over an instance set;
//! - [`metrics`]: path-level metrics (HCA, LeafAcc, POR, S-POR, TOR),
//!   depth-wise conditional accuracies, and forgetting reports;
//! - [`report`]: protocol comparison tables and cross-seed aggregation;
//! - [`sekd`]: a desk-scale self-elicited knowledge distillation engine
//!   where a frozen stepwise teacher supervises a single-pass student.
//!
//! Numeric modules are generic over the scalar type via [`scalar::Scalar`];
//! the `f64` instantiations used by the CLI are aliased at the crate root.

pub mod backends;
pub mod harness;
pub mod instances;
pub mod metrics;
pub mod prompting;
pub mod report;
pub mod scalar;
pub mod sekd;
pub mod taxonomy;
pub mod util;

/// Default scalar for end-to-end runs; gradient checks require fp64.
pub type DefaultScalar = f64;

pub type MetricReport = metrics::MetricReport<DefaultScalar>;
pub type ForgettingReport = metrics::ForgettingReport<DefaultScalar>;
pub type SyntheticWorld = sekd::SyntheticWorld<DefaultScalar>;
pub type ScorerParams = sekd::ScorerParams<DefaultScalar>;
pub type Projector = sekd::Projector<DefaultScalar>;
pub type LossWeights = sekd::LossWeights<DefaultScalar>;
