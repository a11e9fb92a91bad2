//! Desk-scale self-elicited knowledge distillation.
//!
//! The same tiny per-level option scorer plays two roles over a synthetic
//! world:
//!
//! - as a frozen stepwise teacher it commits to one option per level and
//!   re-injects its own previous choice as an explicit parent-label
//!   embedding (the known-fact mechanism), exposing a hard label, a soft
//!   distribution, and its hidden anchor state at every level;
//! - as a trainable single-pass student it walks the same levels but can
//!   condition only on its own previously emitted option letters, never on
//!   label text, teacher choices, or gold.
//!
//! The asymmetry matters: a pretrained base scorer is strong when a parent
//! label is supplied and degrades with depth when it has to rely on its own
//! letter tokens, reproducing the conditioned-vs-joint gap. Distillation
//! with hard, soft, and feature losses transfers the stepwise behavior
//! into the single pass.
//!
//! Everything is generic over [`crate::scalar::Scalar`]; gradients are
//! analytic and verified against central finite differences at `f64`.

mod losses;
mod optim;
mod params_io;
mod scorer;
mod train;
mod world;

pub use losses::{
    argmax_lowest, kl_divergence, loss_feat, loss_hard, loss_soft, loss_total, softmax, temper,
    LossParts, LossWeights, PROB_FLOOR,
};
pub use optim::{AdamW, OptimizerConfig};
pub use params_io::{load_params, save_params};
pub use scorer::{
    DistillSignals, LevelActivation, LevelSignal, ParentSel, Projector, ScorerConfig, ScorerMeta,
    ScorerParams, StudentTrace,
};
pub use train::{
    distill, eval_conditioned, eval_joint, eval_teacher_forced, grads_for_example, loss_for_chain,
    pretrain_base, DistillConfig, DistillOutcome, EpochStats, Grads, PretrainConfig, PretrainStats,
    TrainDataConfig,
};
pub use world::{Example, SyntheticWorld, WorldConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SekdError {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("loss weights must not all be zero")]
    AllZeroWeights,
    #[error("kd temperature must be > 0")]
    BadTemperature,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown parent label `{0}`")]
    UnknownLabel(String),
    #[error("training diverged at epoch {epoch}, example {example}: loss {loss}")]
    Diverged {
        epoch: usize,
        example: usize,
        loss: f64,
    },
    #[error(transparent)]
    Taxonomy(#[from] crate::taxonomy::TaxonomyError),
    #[error("parameter file: {0}")]
    ParamsIo(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
