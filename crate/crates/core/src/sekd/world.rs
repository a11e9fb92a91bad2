//! Synthetic hierarchical world standing in for images.
//!
//! The world owns a full `branching`-ary taxonomy under a singleton root.
//! Each question level has `branching` shared offset directions; a node's
//! mean is its parent's mean plus the level scale times the direction of
//! its sibling index. A feature is its leaf's mean plus Gaussian noise.
//!
//! Because directions are shared within a level but scales stack across
//! levels, separating deep levels from the raw feature alone requires
//! untangling the coarser levels first, while knowing the parent reduces
//! the decision to one clean local projection. That makes explicit parent
//! conditioning genuinely easier than single-pass decoding, which is the
//! regime the distillation study needs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SekdError;
use crate::scalar::Scalar;
use crate::taxonomy::{synthetic_tree, NodeId, TaxonomyTree};
use crate::util::{fnv1a, mix_seed, seeded_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Number of question levels (branching levels under the root).
    pub question_levels: usize,
    /// Options per question; also the tree fan-out.
    pub branching: usize,
    pub feature_dim: usize,
    /// Standard deviation of the feature noise.
    pub noise_scale: f64,
    /// Offset magnitude per question level; length `question_levels`.
    pub level_scales: Vec<f64>,
    pub seed: u64,
}

impl WorldConfig {
    /// The standard study world: six four-option levels over a 16-d
    /// feature space.
    pub fn standard(seed: u64) -> Self {
        Self {
            question_levels: 6,
            branching: 4,
            feature_dim: 16,
            noise_scale: 0.4,
            level_scales: vec![2.0, 1.5, 1.15, 0.9, 0.7, 0.55],
            seed,
        }
    }
}

/// One synthetic sample: a feature vector plus its gold decision chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub leaf: NodeId,
    pub feature: Vec<T>,
    /// Gold option index per question level (sibling index of the gold
    /// node among its label-sorted siblings).
    pub gold_options: Vec<usize>,
    /// Option labels per question level, in letter order. Fixed by the
    /// gold path: the label-sorted children of the gold parent.
    pub options: Vec<Vec<String>>,
}

/// Immutable synthetic world shared by teacher and student.
#[derive(Debug, Clone)]
pub struct SyntheticWorld<T> {
    pub tree: TaxonomyTree,
    pub feature_dim: usize,
    pub noise_scale: T,
    pub rng_seed: u64,
    leaf_means: std::collections::BTreeMap<NodeId, Vec<T>>,
    config: WorldConfig,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; the clamp keeps ln finite.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl<T: Scalar> SyntheticWorld<T> {
    pub fn generate(config: WorldConfig) -> Result<Self, SekdError> {
        if config.level_scales.len() != config.question_levels {
            return Err(SekdError::DimensionMismatch(format!(
                "{} level scales for {} question levels",
                config.level_scales.len(),
                config.question_levels
            )));
        }
        let tree = synthetic_tree("synthetic-world", config.question_levels, config.branching)?;

        // Shared per-level offset directions.
        let mut dir_rng = seeded_rng(config.seed, &[fnv1a(b"directions")]);
        let directions: Vec<Vec<Vec<f64>>> = (0..config.question_levels)
            .map(|_| {
                (0..config.branching)
                    .map(|_| unit_vector(config.feature_dim, &mut dir_rng))
                    .collect()
            })
            .collect();

        // Accumulate means down the tree; only leaf means are retained.
        let mut leaf_means = std::collections::BTreeMap::new();
        let root = tree.root().id.clone();
        let mut stack: Vec<(NodeId, Vec<f64>)> = vec![(root, vec![0.0; config.feature_dim])];
        while let Some((id, mean)) = stack.pop() {
            let children = tree.children_of(&id)?;
            if children.is_empty() {
                leaf_means.insert(id, mean.iter().map(|&v| T::from_f64c(v)).collect());
                continue;
            }
            let level = tree.node(&id).expect("node exists").depth - 1;
            for (idx, child) in children.iter().enumerate() {
                let dir = &directions[level][idx];
                let child_mean: Vec<f64> = mean
                    .iter()
                    .zip(dir)
                    .map(|(m, d)| m + config.level_scales[level] * d)
                    .collect();
                stack.push((child.id.clone(), child_mean));
            }
        }

        Ok(Self {
            tree,
            feature_dim: config.feature_dim,
            noise_scale: T::from_f64c(config.noise_scale),
            rng_seed: config.seed,
            leaf_means,
            config,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn question_levels(&self) -> usize {
        self.config.question_levels
    }

    pub fn leaf_mean(&self, leaf: &str) -> Option<&[T]> {
        self.leaf_means.get(leaf).map(Vec::as_slice)
    }

    /// Labels every parent context can take: all labels at depths that
    /// have children (the root plus every internal level).
    pub fn parent_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = (1..=self.config.question_levels)
            .flat_map(|depth| self.tree.labels_at_depth(depth).to_vec())
            .collect();
        labels.sort();
        labels
    }

    /// Sample one example for a leaf.
    pub fn sample_example(&self, leaf: &str, rng: &mut ChaCha8Rng) -> Result<Example<T>, SekdError> {
        let mean = self
            .leaf_means
            .get(leaf)
            .ok_or_else(|| SekdError::UnknownLabel(leaf.to_string()))?;
        let feature: Vec<T> = mean
            .iter()
            .map(|&m| m + self.noise_scale * T::from_f64c(gaussian(rng)))
            .collect();
        let path = self.tree.path_for_leaf(leaf)?;
        let mut gold_options = Vec::with_capacity(self.config.question_levels);
        let mut options = Vec::with_capacity(self.config.question_levels);
        // Question level l decides the node at tree depth l + 1.
        for node_id in path.node_ids.iter().skip(1) {
            let siblings = self.tree.siblings_at(node_id)?;
            let idx = siblings
                .iter()
                .position(|n| &n.id == node_id)
                .expect("node among siblings");
            gold_options.push(idx);
            options.push(siblings.iter().map(|n| n.label.clone()).collect());
        }
        Ok(Example {
            leaf: leaf.to_string(),
            feature,
            gold_options,
            options,
        })
    }

    /// Draw `n` examples over uniformly random leaves; deterministic per
    /// seed and independent of call order.
    pub fn sample_dataset(&self, n: usize, seed: u64) -> Result<Vec<Example<T>>, SekdError> {
        let leaves = self.tree.leaves();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = seeded_rng(mix_seed(self.rng_seed, &[seed]), &[i as u64]);
            let leaf = leaves[rng.gen_range(0..leaves.len())].id.clone();
            out.push(self.sample_example(&leaf, &mut rng)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_world_shape() {
        let world: SyntheticWorld<f64> = SyntheticWorld::generate(WorldConfig::standard(42)).unwrap();
        assert_eq!(world.tree.leaves().len(), 4096);
        assert_eq!(world.question_levels(), 6);
        let data = world.sample_dataset(8, 1).unwrap();
        for ex in &data {
            assert_eq!(ex.feature.len(), 16);
            assert_eq!(ex.gold_options.len(), 6);
            assert!(ex.options.iter().all(|o| o.len() == 4));
            for (level, &g) in ex.gold_options.iter().enumerate() {
                // The gold label sits at the gold option index.
                let path = world.tree.path_for_leaf(&ex.leaf).unwrap();
                assert_eq!(ex.options[level][g], path.labels[level + 1]);
            }
        }
    }

    #[test]
    fn datasets_are_deterministic_per_seed() {
        let world: SyntheticWorld<f64> = SyntheticWorld::generate(WorldConfig::standard(7)).unwrap();
        let a = world.sample_dataset(5, 3).unwrap();
        let b = world.sample_dataset(5, 3).unwrap();
        assert_eq!(a, b);
        let c = world.sample_dataset(5, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_leaf_has_a_mean() {
        let cfg = WorldConfig {
            question_levels: 3,
            branching: 3,
            feature_dim: 8,
            noise_scale: 0.1,
            level_scales: vec![1.0, 0.6, 0.4],
            seed: 9,
        };
        let world: SyntheticWorld<f64> = SyntheticWorld::generate(cfg).unwrap();
        for leaf in world.tree.leaves() {
            assert!(world.leaf_mean(&leaf.id).is_some());
        }
    }
}
