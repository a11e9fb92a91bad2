//! Distillation losses over per-level option distributions and anchors.
//!
//! All three losses sum over levels and exist only at the per-level
//! decision positions (the toy has no other positions). Softmax uses
//! max-subtraction; logs are floored at [`PROB_FLOOR`].

use serde::{Deserialize, Serialize};

use super::scorer::Projector;
use super::SekdError;
use crate::scalar::Scalar;

/// Probability floor inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Weights of the three loss terms plus the distillation temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights<T> {
    pub lambda_hard: T,
    pub lambda_soft: T,
    pub lambda_feat: T,
    pub kd_temperature: T,
}

impl<T: Scalar> LossWeights<T> {
    /// The study defaults: hard-dominated weighting at temperature 1.
    pub fn standard() -> Self {
        Self {
            lambda_hard: T::from_f64c(2.0),
            lambda_soft: T::from_f64c(1.0),
            lambda_feat: T::from_f64c(0.5),
            kd_temperature: T::one(),
        }
    }

    pub fn with_lambdas(hard: f64, soft: f64, feat: f64) -> Self {
        Self {
            lambda_hard: T::from_f64c(hard),
            lambda_soft: T::from_f64c(soft),
            lambda_feat: T::from_f64c(feat),
            kd_temperature: T::one(),
        }
    }

    pub fn validate(&self) -> Result<(), SekdError> {
        let zero = T::zero();
        if self.lambda_hard == zero && self.lambda_soft == zero && self.lambda_feat == zero {
            return Err(SekdError::AllZeroWeights);
        }
        if self.lambda_hard < zero || self.lambda_soft < zero || self.lambda_feat < zero {
            return Err(SekdError::AllZeroWeights);
        }
        if !(self.kd_temperature > zero) {
            return Err(SekdError::BadTemperature);
        }
        Ok(())
    }
}

/// Numerically stable softmax at a temperature.
pub fn softmax<T: Scalar>(logits: &[T], temperature: T) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let exps: Vec<T> = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Re-soften a probability vector at a temperature: softmax(ln p / t).
/// For p = softmax(logits) this equals softmax(logits / t) exactly, so
/// stored distributions can be re-tempered without keeping logits around.
pub fn temper<T: Scalar>(dist: &[T], temperature: T) -> Vec<T> {
    let logs: Vec<T> = dist
        .iter()
        .map(|&p| p.max(T::from_f64c(PROB_FLOOR)).ln())
        .collect();
    softmax(&logs, temperature)
}

/// Index of the maximum, ties broken toward the lowest index (letter A).
pub fn argmax_lowest<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Sum over levels of cross-entropy against the teacher's hard labels.
pub fn loss_hard<T: Scalar>(p_student: &[Vec<T>], hard_labels: &[usize]) -> T {
    let floor = T::from_f64c(PROB_FLOOR);
    p_student
        .iter()
        .zip(hard_labels)
        .map(|(p, &y)| -(p[y].max(floor)).ln())
        .sum()
}

/// KL(p || q) with floored logs.
pub fn kl_divergence<T: Scalar>(p: &[T], q: &[T]) -> T {
    let floor = T::from_f64c(PROB_FLOOR);
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi <= T::zero() {
                T::zero()
            } else {
                pi * (pi.max(floor).ln() - qi.max(floor).ln())
            }
        })
        .sum()
}

/// Sum over levels of KL(teacher || student) with both distributions
/// re-tempered at `temperature`.
pub fn loss_soft<T: Scalar>(p_teacher: &[Vec<T>], p_student: &[Vec<T>], temperature: T) -> T {
    p_teacher
        .iter()
        .zip(p_student)
        .map(|(pt, ps)| kl_divergence(&temper(pt, temperature), &temper(ps, temperature)))
        .sum()
}

/// Sum over levels of the squared distance between projected student
/// anchors and teacher anchors.
pub fn loss_feat<T: Scalar>(h_student: &[Vec<T>], h_teacher: &[Vec<T>], w: &Projector<T>) -> T {
    h_student
        .iter()
        .zip(h_teacher)
        .map(|(hs, ht)| {
            let projected = w.apply(hs);
            projected
                .iter()
                .zip(ht)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<T>()
        })
        .sum()
}

/// Unweighted values of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts<T> {
    pub hard: T,
    pub soft: T,
    pub feat: T,
}

impl<T: Scalar> LossParts<T> {
    pub fn zero() -> Self {
        Self {
            hard: T::zero(),
            soft: T::zero(),
            feat: T::zero(),
        }
    }
}

/// Weighted total loss.
pub fn loss_total<T: Scalar>(parts: LossParts<T>, weights: &LossWeights<T>) -> T {
    weights.lambda_hard * parts.hard
        + weights.lambda_soft * parts.soft
        + weights.lambda_feat * parts.feat
}
