//! Path-level metrics over prediction masks.
//!
//! Every metric is a plain aggregation over per-sample correctness masks
//! (`mask[l]` true iff level `l+1` was predicted correctly; parse failures
//! are already false by the time masks exist). Samples may have different
//! path lengths `L_i`.
//!
//! - HCA: fraction of samples whose whole path is correct.
//! - LeafAcc: accuracy at the deepest level of each path.
//! - POR: mean per-level accuracy along each path.
//! - S-POR: normalized length of the longest contiguous correct block
//!   anywhere in the path; a prefix variant measures the longest correct
//!   prefix from the root instead. The two disagree (mask `[0,1,1]` scores
//!   2/3 vs 0) and both are reported.
//! - TOR: fraction of adjacent level pairs where both ends are correct;
//!   paths with `L_i < 2` are excluded and counted.
//! - Conditional accuracy at level `l`: accuracy at `l+1` restricted to
//!   samples with a correct (resp. incorrect) level `l`, and their gap.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no samples")]
    Empty,
    #[error("no samples eligible for {0}")]
    NoEligibleSamples(&'static str),
    #[error("accuracy {0} outside the valid range")]
    OutOfRange(f64),
    #[error("a sample has an empty mask")]
    EmptyMask,
}

fn check_masks(masks: &[impl AsRef<[bool]>]) -> Result<(), MetricsError> {
    if masks.is_empty() {
        return Err(MetricsError::Empty);
    }
    if masks.iter().any(|m| m.as_ref().is_empty()) {
        return Err(MetricsError::EmptyMask);
    }
    Ok(())
}

/// Fraction of samples whose entire path is correct.
pub fn compute_hca<T: Scalar>(masks: &[impl AsRef<[bool]>]) -> Result<T, MetricsError> {
    check_masks(masks)?;
    let hits = masks
        .iter()
        .filter(|m| m.as_ref().iter().all(|&c| c))
        .count();
    Ok(T::from_count(hits) / T::from_count(masks.len()))
}

/// Accuracy at the deepest level of each path.
pub fn compute_leaf_acc<T: Scalar>(masks: &[impl AsRef<[bool]>]) -> Result<T, MetricsError> {
    check_masks(masks)?;
    let hits = masks
        .iter()
        .filter(|m| *m.as_ref().last().expect("non-empty mask"))
        .count();
    Ok(T::from_count(hits) / T::from_count(masks.len()))
}

/// Mean per-level accuracy along each path.
pub fn compute_por<T: Scalar>(masks: &[impl AsRef<[bool]>]) -> Result<T, MetricsError> {
    check_masks(masks)?;
    let mut total = T::zero();
    for m in masks {
        let m = m.as_ref();
        let correct = m.iter().filter(|&&c| c).count();
        total += T::from_count(correct) / T::from_count(m.len());
    }
    Ok(total / T::from_count(masks.len()))
}

fn longest_run(mask: &[bool]) -> usize {
    let mut best = 0usize;
    let mut run = 0usize;
    for &c in mask {
        if c {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

fn prefix_run(mask: &[bool]) -> usize {
    mask.iter().take_while(|&&c| c).count()
}

/// Normalized longest contiguous correct block anywhere in the path.
pub fn compute_spor<T: Scalar>(masks: &[impl AsRef<[bool]>]) -> Result<T, MetricsError> {
    check_masks(masks)?;
    let mut total = T::zero();
    for m in masks {
        let m = m.as_ref();
        total += T::from_count(longest_run(m)) / T::from_count(m.len());
    }
    Ok(total / T::from_count(masks.len()))
}

/// Normalized longest correct prefix from the root.
pub fn compute_spor_prefix<T: Scalar>(masks: &[impl AsRef<[bool]>]) -> Result<T, MetricsError> {
    check_masks(masks)?;
    let mut total = T::zero();
    for m in masks {
        let m = m.as_ref();
        total += T::from_count(prefix_run(m)) / T::from_count(m.len());
    }
    Ok(total / T::from_count(masks.len()))
}

/// Fraction of adjacent parent-child pairs with both ends correct,
/// averaged over samples with `L_i >= 2`. Returns the metric and the
/// number of excluded short paths.
pub fn compute_tor<T: Scalar>(masks: &[impl AsRef<[bool]>]) -> Result<(T, usize), MetricsError> {
    check_masks(masks)?;
    let mut total = T::zero();
    let mut eligible = 0usize;
    let mut excluded = 0usize;
    for m in masks {
        let m = m.as_ref();
        if m.len() < 2 {
            excluded += 1;
            continue;
        }
        let pairs = m.windows(2).filter(|w| w[0] && w[1]).count();
        total += T::from_count(pairs) / T::from_count(m.len() - 1);
        eligible += 1;
    }
    if eligible == 0 {
        return Err(MetricsError::NoEligibleSamples("TOR"));
    }
    Ok((total / T::from_count(eligible), excluded))
}

/// Accuracy at one level over samples reaching it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAccuracy<T> {
    /// 1-based level.
    pub level: usize,
    pub acc: T,
    pub n: usize,
}

/// Per-level accuracies for levels `1..=max L_i`.
pub fn compute_per_level_acc<T: Scalar>(
    masks: &[impl AsRef<[bool]>],
) -> Result<Vec<LevelAccuracy<T>>, MetricsError> {
    check_masks(masks)?;
    let max_depth = masks.iter().map(|m| m.as_ref().len()).max().unwrap_or(0);
    let mut out = Vec::with_capacity(max_depth);
    for level in 1..=max_depth {
        let mut hits = 0usize;
        let mut n = 0usize;
        for m in masks {
            if let Some(&c) = m.as_ref().get(level - 1) {
                hits += usize::from(c);
                n += 1;
            }
        }
        out.push(LevelAccuracy {
            level,
            acc: T::from_count(hits) / T::from_count(n),
            n,
        });
    }
    Ok(out)
}

/// Conditional accuracy at `level + 1` given correctness at `level`.
/// Branches lacking samples are absent rather than zero; the gap exists
/// only when both branches do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalAccuracy<T> {
    /// 1-based conditioning level `l`; the measured accuracy is at `l+1`.
    pub level: usize,
    pub acc_given_correct: Option<T>,
    pub acc_given_error: Option<T>,
    pub delta: Option<T>,
    pub n_correct_parent: usize,
    pub n_error_parent: usize,
}

pub fn compute_conditional<T: Scalar>(
    masks: &[impl AsRef<[bool]>],
    level: usize,
) -> Result<ConditionalAccuracy<T>, MetricsError> {
    check_masks(masks)?;
    let mut hits = [0usize; 2];
    let mut counts = [0usize; 2];
    for m in masks {
        let m = m.as_ref();
        // Restrict to samples reaching level + 1.
        if m.len() < level + 1 {
            continue;
        }
        let branch = usize::from(!m[level - 1]);
        counts[branch] += 1;
        hits[branch] += usize::from(m[level]);
    }
    let acc = |branch: usize| -> Option<T> {
        (counts[branch] > 0).then(|| T::from_count(hits[branch]) / T::from_count(counts[branch]))
    };
    let acc_given_correct = acc(0);
    let acc_given_error = acc(1);
    let delta = match (acc_given_correct, acc_given_error) {
        (Some(c), Some(e)) => Some(c - e),
        _ => None,
    };
    Ok(ConditionalAccuracy {
        level,
        acc_given_correct,
        acc_given_error,
        delta,
        n_correct_parent: counts[0],
        n_error_parent: counts[1],
    })
}

/// Counts of samples excluded from individual metrics.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedCounts {
    /// Paths with `L_i < 2`, ineligible for TOR.
    pub tor_short_paths: usize,
}

/// Full metric report for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport<T> {
    pub hca: T,
    pub leaf_acc: T,
    pub por: T,
    /// Longest-block reading (the default).
    pub s_por: T,
    /// Longest-prefix-from-root reading.
    pub s_por_prefix: T,
    /// Absent when no sample has `L_i >= 2`.
    pub tor: Option<T>,
    pub per_level: Vec<LevelAccuracy<T>>,
    pub conditional: Vec<ConditionalAccuracy<T>>,
    pub n_samples: usize,
    pub excluded: ExcludedCounts,
}

impl<T: Scalar> MetricReport<T> {
    /// Flat (metric name, value) view of the five headline metrics.
    pub fn headline(&self, prefix_spor: bool) -> BTreeMap<&'static str, T> {
        let mut out = BTreeMap::new();
        out.insert("hca", self.hca);
        out.insert("leaf_acc", self.leaf_acc);
        out.insert("por", self.por);
        out.insert(
            "s_por",
            if prefix_spor { self.s_por_prefix } else { self.s_por },
        );
        if let Some(tor) = self.tor {
            out.insert("tor", tor);
        }
        out
    }
}

/// Compute every metric over a set of masks.
pub fn compute_report<T: Scalar>(
    masks: &[impl AsRef<[bool]>],
) -> Result<MetricReport<T>, MetricsError> {
    check_masks(masks)?;
    let (tor, tor_excluded) = match compute_tor::<T>(masks) {
        Ok((tor, excluded)) => (Some(tor), excluded),
        Err(MetricsError::NoEligibleSamples(_)) => (None, masks.len()),
        Err(e) => return Err(e),
    };
    let per_level = compute_per_level_acc::<T>(masks)?;
    let max_depth = per_level.len();
    let conditional = (1..max_depth)
        .map(|level| compute_conditional::<T>(masks, level))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricReport {
        hca: compute_hca(masks)?,
        leaf_acc: compute_leaf_acc(masks)?,
        por: compute_por(masks)?,
        s_por: compute_spor(masks)?,
        s_por_prefix: compute_spor_prefix(masks)?,
        tor,
        per_level,
        conditional,
        n_samples: masks.len(),
        excluded: ExcludedCounts {
            tor_short_paths: tor_excluded,
        },
    })
}

/// Accuracy change on an external benchmark after training.
///
/// Two relative readings exist and both are reported unambiguously:
/// `acc_ratio` is after/base, and `rel_forget_pct` is the relative drop
/// `100 * (base - after) / base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport<T> {
    pub acc_base: T,
    pub acc_after: T,
    /// `100 * (after - base)` in percentage points.
    pub delta_pp: T,
    /// `100 * (base - after) / base`.
    pub rel_forget_pct: T,
    /// `after / base`.
    pub acc_ratio: T,
}

/// Both accuracies are fractions in [0,1]; the base must be positive.
pub fn compute_forgetting<T: Scalar>(
    acc_base: T,
    acc_after: T,
) -> Result<ForgettingReport<T>, MetricsError> {
    let base = acc_base.to_f64().unwrap_or(f64::NAN);
    let after = acc_after.to_f64().unwrap_or(f64::NAN);
    if !(base > 0.0 && base <= 1.0) {
        return Err(MetricsError::OutOfRange(base));
    }
    if !(0.0..=1.0).contains(&after) {
        return Err(MetricsError::OutOfRange(after));
    }
    let hundred = T::from_f64c(100.0);
    Ok(ForgettingReport {
        acc_base,
        acc_after,
        delta_pp: hundred * (acc_after - acc_base),
        rel_forget_pct: hundred * (acc_base - acc_after) / acc_base,
        acc_ratio: acc_after / acc_base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn m(rows: &[&[bool]]) -> Vec<Vec<bool>> {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn hca_examples() {
        let all_true = m(&[&[true, true], &[true, true, true]]);
        assert_eq!(compute_hca::<f64>(&all_true).unwrap(), 1.0);
        let one_bad = m(&[&[true, true, false, true]]);
        assert_eq!(compute_hca::<f64>(&one_bad).unwrap(), 0.0);
        assert!(matches!(
            compute_hca::<f64>(&Vec::<Vec<bool>>::new()),
            Err(MetricsError::Empty)
        ));
    }

    #[test]
    fn leaf_acc_examples() {
        let rows = m(&[&[false, false, true]]);
        assert_eq!(compute_leaf_acc::<f64>(&rows).unwrap(), 1.0);
        let rows = m(&[&[true, true, false]]);
        assert_eq!(compute_leaf_acc::<f64>(&rows).unwrap(), 0.0);
    }

    #[test]
    fn worked_mask_values() {
        // mask [1,1,0,1,1,1]: POR 5/6, S-POR 3/6, TOR 3/5.
        let rows = m(&[&[true, true, false, true, true, true]]);
        assert_abs_diff_eq!(compute_por::<f64>(&rows).unwrap(), 5.0 / 6.0);
        assert_abs_diff_eq!(compute_spor::<f64>(&rows).unwrap(), 0.5);
        assert_abs_diff_eq!(compute_tor::<f64>(&rows).unwrap().0, 0.6);
        // Prefix reading differs: longest correct prefix is 2.
        assert_abs_diff_eq!(compute_spor_prefix::<f64>(&rows).unwrap(), 2.0 / 6.0);
    }

    #[test]
    fn spor_readings_disagree_on_non_prefix_block() {
        let rows = m(&[&[false, true, true]]);
        assert_abs_diff_eq!(compute_spor::<f64>(&rows).unwrap(), 2.0 / 3.0);
        assert_abs_diff_eq!(compute_spor_prefix::<f64>(&rows).unwrap(), 0.0);
    }

    #[test]
    fn extreme_masks() {
        let all_false = m(&[&[false, false, false]]);
        assert_eq!(compute_por::<f64>(&all_false).unwrap(), 0.0);
        assert_eq!(compute_spor::<f64>(&all_false).unwrap(), 0.0);
        let all_true = m(&[&[true; 5]]);
        assert_eq!(compute_spor::<f64>(&all_true).unwrap(), 1.0);
        assert_eq!(compute_tor::<f64>(&all_true).unwrap().0, 1.0);
    }

    #[test]
    fn tor_exclusion_rules() {
        let only_short = m(&[&[true]]);
        assert!(matches!(
            compute_tor::<f64>(&only_short),
            Err(MetricsError::NoEligibleSamples("TOR"))
        ));
        let mixed = m(&[&[true], &[true, true]]);
        let (tor, excluded) = compute_tor::<f64>(&mixed).unwrap();
        assert_eq!(tor, 1.0);
        assert_eq!(excluded, 1);
    }

    #[test]
    fn conditional_hand_enumeration() {
        // Masks {[1,1],[1,0],[0,1],[0,0]} at level 1: both branches 1/2.
        let rows = m(&[
            &[true, true],
            &[true, false],
            &[false, true],
            &[false, false],
        ]);
        let c = compute_conditional::<f64>(&rows, 1).unwrap();
        assert_eq!(c.acc_given_correct, Some(0.5));
        assert_eq!(c.acc_given_error, Some(0.5));
        assert_eq!(c.delta, Some(0.0));
        assert_eq!((c.n_correct_parent, c.n_error_parent), (2, 2));
    }

    #[test]
    fn conditional_branch_absent_when_empty() {
        let rows = m(&[&[true, true], &[true, false]]);
        let c = compute_conditional::<f64>(&rows, 1).unwrap();
        assert_eq!(c.acc_given_correct, Some(0.5));
        assert_eq!(c.acc_given_error, None);
        assert_eq!(c.delta, None);
    }

    #[test]
    fn forgetting_matches_reported_rows() {
        // Fractions in, percentage-point deltas out.
        let r = compute_forgetting(0.8454_f64, 0.8411).unwrap();
        assert_eq!((r.delta_pp * 100.0).round() / 100.0, -0.43);
        assert_eq!((r.rel_forget_pct * 100.0).round() / 100.0, 0.51);
        let r = compute_forgetting(0.8634_f64, 0.8625).unwrap();
        assert_eq!((r.delta_pp * 100.0).round() / 100.0, -0.09);
        assert_eq!((r.rel_forget_pct * 100.0).round() / 100.0, 0.10);
        // Identity case.
        let r = compute_forgetting(0.5_f64, 0.5).unwrap();
        assert_abs_diff_eq!(r.delta_pp, 0.0);
        assert_abs_diff_eq!(r.rel_forget_pct, 0.0);
        assert_abs_diff_eq!(r.acc_ratio, 1.0);
    }

    #[test]
    fn forgetting_rejects_bad_inputs() {
        assert!(compute_forgetting(0.0_f64, 0.5).is_err());
        assert!(compute_forgetting(0.5_f64, 1.5).is_err());
    }

    #[test]
    fn report_runs_at_f32_too() {
        let rows = m(&[&[true, false, true], &[true, true, true]]);
        let report = compute_report::<f32>(&rows).unwrap();
        assert_eq!(report.hca, 0.5);
        assert_eq!(report.n_samples, 2);
    }

    fn mask_strategy() -> impl Strategy<Value = Vec<Vec<bool>>> {
        proptest::collection::vec(
            proptest::collection::vec(proptest::bool::ANY, 1..12),
            1..40,
        )
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_reordering(mut masks in mask_strategy()) {
            let report = compute_report::<f64>(&masks).unwrap();
            masks.reverse();
            let reversed = compute_report::<f64>(&masks).unwrap();
            prop_assert_eq!(report.hca, reversed.hca);
            prop_assert_eq!(report.por, reversed.por);
            prop_assert_eq!(report.s_por, reversed.s_por);
            prop_assert_eq!(report.leaf_acc, reversed.leaf_acc);
            prop_assert_eq!(report.tor, reversed.tor);
        }

        #[test]
        fn hca_bounded_by_per_level_and_leaf(masks in mask_strategy()) {
            let report = compute_report::<f64>(&masks).unwrap();
            prop_assert!(report.hca <= report.leaf_acc + 1e-12);
            // HCA cannot exceed accuracy at any level that every sample reaches.
            let min_depth = masks.iter().map(|m| m.len()).min().unwrap();
            for row in report.per_level.iter().take(min_depth) {
                prop_assert!(report.hca <= row.acc + 1e-12);
            }
        }

        #[test]
        fn tor_bounded_by_por_on_eligible_samples(masks in mask_strategy()) {
            let eligible: Vec<Vec<bool>> =
                masks.into_iter().filter(|m| m.len() >= 2).collect();
            if !eligible.is_empty() {
                let (tor, _) = compute_tor::<f64>(&eligible).unwrap();
                let por = compute_por::<f64>(&eligible).unwrap();
                prop_assert!(tor <= por + 1e-12);
            }
        }
    }
}
