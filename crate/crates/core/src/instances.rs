//! Per-image multiple-choice VQA instances.
//!
//! Each instance carries one question per level of its gold root-to-leaf
//! path. Options at a level are the gold label plus distractors drawn from
//! the same taxonomy level by a pluggable sampler, then randomly permuted
//! onto letters. The letter-to-label assignment is fixed for the lifetime
//! of the instance: every prompt rendered from it reuses the same choices.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{TaxPath, TaxonomyError, TaxonomyTree};
use crate::util::{fnv1a, seeded_rng};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("level of `{gold}` has no candidate distractor labels")]
    NoCandidates { gold: String },
    #[error("weighted sampler: {0}")]
    BadWeights(String),
    #[error("malformed instance record: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Option letter. At most four options are ever rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
    C,
    D,
}

impl Letter {
    pub const ALL: [Letter; 4] = [Letter::A, Letter::B, Letter::C, Letter::D];

    pub fn index(self) -> usize {
        match self {
            Letter::A => 0,
            Letter::B => 1,
            Letter::C => 2,
            Letter::D => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Letter> {
        Letter::ALL.get(i).copied()
    }

    pub fn from_char(c: char) -> Option<Letter> {
        match c {
            'A' => Some(Letter::A),
            'B' => Some(Letter::B),
            'C' => Some(Letter::C),
            'D' => Some(Letter::D),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Letter::A => 'A',
            Letter::B => 'B',
            Letter::C => 'C',
            Letter::D => 'D',
        }
    }
}

impl std::fmt::Display for Letter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Serde helpers mapping `Option<Letter>` to `"A".."D"` or the `"FAIL"`
/// sentinel used throughout persisted records.
pub mod letter_slot {
    use super::Letter;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Option<Letter>], s: S) -> Result<S::Ok, S::Error> {
        let strs: Vec<&str> = v
            .iter()
            .map(|slot| match slot {
                Some(Letter::A) => "A",
                Some(Letter::B) => "B",
                Some(Letter::C) => "C",
                Some(Letter::D) => "D",
                None => "FAIL",
            })
            .collect();
        strs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<Letter>>, D::Error> {
        let strs = Vec::<String>::deserialize(d)?;
        strs.iter()
            .map(|t| match t.as_str() {
                "A" => Ok(Some(Letter::A)),
                "B" => Ok(Some(Letter::B)),
                "C" => Ok(Some(Letter::C)),
                "D" => Ok(Some(Letter::D)),
                "FAIL" => Ok(None),
                other => Err(serde::de::Error::custom(format!("bad letter `{other}`"))),
            })
            .collect()
    }
}

/// One level's multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelQuestion {
    /// 1-based level index along the instance's gold path.
    pub level_index: usize,
    pub level_name: String,
    pub question_text: String,
    /// Option labels in letter order (`options[0]` is choice A). May hold
    /// fewer than four entries on degenerate levels.
    pub options: Vec<String>,
    pub gold_letter: Letter,
}

impl LevelQuestion {
    /// Label selected by a letter, if the letter is within the rendered
    /// option count.
    pub fn label_for(&self, letter: Letter) -> Option<&str> {
        self.options.get(letter.index()).map(String::as_str)
    }

    pub fn gold_label(&self) -> &str {
        &self.options[self.gold_letter.index()]
    }
}

/// One image's full ladder of per-level questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaInstance {
    pub instance_id: String,
    pub image_ref: String,
    pub gold_path: TaxPath,
    pub per_level: Vec<LevelQuestion>,
}

impl VqaInstance {
    /// Path length `L_i`.
    pub fn depth(&self) -> usize {
        self.per_level.len()
    }

    pub fn gold_letters(&self) -> Vec<Letter> {
        self.per_level.iter().map(|q| q.gold_letter).collect()
    }

    pub fn gold_labels(&self) -> Vec<&str> {
        self.gold_path.labels.iter().map(String::as_str).collect()
    }
}

/// Distractor sampling policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SamplerPolicy {
    /// Uniform over same-level non-gold labels.
    Uniform,
    /// Prefer labels sharing the gold node's parent, then fall back to the
    /// rest of the level; mimics confusability-mined choice sets.
    SiblingPreferring,
    /// Sample proportionally to per-label weights loaded from a file.
    /// Candidates absent from the map weigh zero; if all remaining weights
    /// are zero the draw falls back to uniform.
    Weighted { weights: BTreeMap<String, f64> },
}

impl SamplerPolicy {
    pub fn weighted_from_json(json: &str) -> Result<Self, InstanceError> {
        #[derive(Deserialize)]
        struct WeightsDoc {
            weights: BTreeMap<String, f64>,
        }
        let doc: WeightsDoc =
            serde_json::from_str(json).map_err(|e| InstanceError::BadWeights(e.to_string()))?;
        if doc.weights.values().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(InstanceError::BadWeights(
                "weights must be finite and non-negative".into(),
            ));
        }
        Ok(SamplerPolicy::Weighted {
            weights: doc.weights,
        })
    }

    pub fn describe(&self) -> String {
        match self {
            SamplerPolicy::Uniform => "uniform".into(),
            SamplerPolicy::SiblingPreferring => "sibling".into(),
            SamplerPolicy::Weighted { weights } => format!("weighted({} labels)", weights.len()),
        }
    }
}

/// Draw up to `k` distractor labels for `gold`, all from the gold node's
/// taxonomy level and none equal to the gold label. Deterministic per seed.
pub fn sample_distractors(
    tree: &TaxonomyTree,
    gold: &str,
    k: usize,
    policy: &SamplerPolicy,
    rng_seed: u64,
) -> Result<Vec<String>, InstanceError> {
    let node = tree
        .node(gold)
        .ok_or_else(|| TaxonomyError::UnknownNode(gold.to_string()))?;
    let gold_label = node.label.clone();
    let mut rng = seeded_rng(rng_seed, &[fnv1a(gold.as_bytes())]);

    let pool: Vec<String> = tree
        .labels_at_depth(node.depth)
        .iter()
        .filter(|l| **l != gold_label)
        .cloned()
        .collect();
    if pool.is_empty() {
        return Err(InstanceError::NoCandidates {
            gold: gold.to_string(),
        });
    }
    let take = k.min(pool.len());

    match policy {
        SamplerPolicy::Uniform => Ok(draw_uniform(&pool, take, &mut rng)),
        SamplerPolicy::SiblingPreferring => {
            let sibling_labels: Vec<String> = tree
                .siblings_at(gold)?
                .iter()
                .filter(|n| n.label != gold_label)
                .map(|n| n.label.clone())
                .collect();
            let mut picked = draw_uniform(&sibling_labels, take.min(sibling_labels.len()), &mut rng);
            if picked.len() < take {
                // Pad from the other subtrees at the same depth.
                let rest: Vec<String> = pool
                    .iter()
                    .filter(|l| !picked.contains(l))
                    .cloned()
                    .collect();
                picked.extend(draw_uniform(&rest, take - picked.len(), &mut rng));
            }
            Ok(picked)
        }
        SamplerPolicy::Weighted { weights } => {
            let mut remaining = pool;
            let mut picked = Vec::with_capacity(take);
            while picked.len() < take {
                let total: f64 = remaining
                    .iter()
                    .map(|l| weights.get(l).copied().unwrap_or(0.0))
                    .sum();
                let choice = if total > 0.0 {
                    let mut target = rng.gen_range(0.0..total);
                    let mut idx = remaining.len() - 1;
                    for (i, label) in remaining.iter().enumerate() {
                        let w = weights.get(label).copied().unwrap_or(0.0);
                        if target < w {
                            idx = i;
                            break;
                        }
                        target -= w;
                    }
                    idx
                } else {
                    rng.gen_range(0..remaining.len())
                };
                picked.push(remaining.swap_remove(choice));
            }
            Ok(picked)
        }
    }
}

fn draw_uniform(pool: &[String], k: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    indices.shuffle(rng);
    indices.truncate(k);
    indices.into_iter().map(|i| pool[i].clone()).collect()
}

/// Render the per-level question sentence.
pub fn question_text(level_name: &str) -> String {
    format!(
        "Based on taxonomy and the known facts above, where does the organism in the image fall in terms of {level_name}?"
    )
}

/// Build one instance for a leaf. Identical `(tree, leaf, sampler, seed)`
/// always yields an identical instance.
pub fn build_instance(
    tree: &TaxonomyTree,
    leaf: &str,
    image_ref: &str,
    sampler: &SamplerPolicy,
    rng_seed: u64,
) -> Result<VqaInstance, InstanceError> {
    let gold_path = tree.path_for_leaf(leaf)?;
    let mut per_level = Vec::with_capacity(gold_path.len());
    for (idx, node_id) in gold_path.node_ids.iter().enumerate() {
        let level_index = idx + 1;
        let gold_label = gold_path.labels[idx].clone();
        let level_seed = crate::util::mix_seed(rng_seed, &[fnv1a(leaf.as_bytes()), level_index as u64]);
        let distractors = match sample_distractors(tree, node_id, 3, sampler, level_seed) {
            Ok(d) => d,
            // Degenerate levels (e.g. a singleton root) render fewer options.
            Err(InstanceError::NoCandidates { .. }) => Vec::new(),
            Err(e) => return Err(e),
        };
        let mut options = Vec::with_capacity(distractors.len() + 1);
        options.push(gold_label.clone());
        options.extend(distractors);
        let mut shuffle_rng = seeded_rng(level_seed, &[0x5348]);
        options.shuffle(&mut shuffle_rng);
        let gold_pos = options
            .iter()
            .position(|o| *o == gold_label)
            .expect("gold label among options");
        per_level.push(LevelQuestion {
            level_index,
            level_name: tree.levels()[idx].clone(),
            question_text: question_text(&tree.levels()[idx]),
            options,
            gold_letter: Letter::from_index(gold_pos).expect("at most four options"),
        });
    }
    Ok(VqaInstance {
        instance_id: format!("{}:{}", tree.name(), leaf),
        image_ref: image_ref.to_string(),
        gold_path,
        per_level,
    })
}

/// Generate `n` instances over leaves drawn uniformly at random.
pub fn generate_instances(
    tree: &TaxonomyTree,
    n: usize,
    sampler: &SamplerPolicy,
    seed: u64,
) -> Result<Vec<VqaInstance>, InstanceError> {
    let leaves = tree.leaves();
    let mut rng = seeded_rng(seed, &[fnv1a(b"leaf-draw")]);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let leaf = leaves[rng.gen_range(0..leaves.len())];
        let mut inst = build_instance(
            tree,
            &leaf.id,
            &format!("synthetic://{}/{i:06}", tree.name()),
            sampler,
            crate::util::mix_seed(seed, &[i as u64]),
        )?;
        inst.instance_id = format!("inst-{i:06}");
        out.push(inst);
    }
    Ok(out)
}

/// Train/val/test id manifest. Splits are disjoint by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Split ids 6:2:2. Val and test sizes are floored; the remainder goes to
/// train. Assignment shuffles ids deterministically per seed.
pub fn split_ids(ids: &[String], seed: u64) -> SplitManifest {
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = seeded_rng(seed, &[fnv1a(b"split")]);
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let n_val = n / 5;
    let n_test = n / 5;
    let n_train = n - n_val - n_test;
    SplitManifest {
        train: shuffled[..n_train].to_vec(),
        val: shuffled[n_train..n_train + n_val].to_vec(),
        test: shuffled[n_train + n_val..].to_vec(),
    }
}

/// Write instances as newline-delimited JSON, one record per line.
/// `header`, when given, is written first as a `{"type":"header",...}` line.
pub fn write_instances<W: Write>(
    mut w: W,
    header: Option<&serde_json::Value>,
    instances: &[VqaInstance],
) -> Result<(), InstanceError> {
    if let Some(h) = header {
        let line = serde_json::json!({"type": "header", "config": h});
        writeln!(w, "{line}")?;
    }
    for inst in instances {
        writeln!(w, "{}", serde_json::to_string(inst).expect("instance serializes"))?;
    }
    Ok(())
}

/// Read instances from newline-delimited JSON, skipping header lines.
pub fn read_instances<R: BufRead>(r: R) -> Result<Vec<VqaInstance>, InstanceError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| InstanceError::Malformed(e.to_string()))?;
        if value.get("type").and_then(|t| t.as_str()) == Some("header") {
            continue;
        }
        let inst: VqaInstance =
            serde_json::from_value(value).map_err(|e| InstanceError::Malformed(e.to_string()))?;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{synthetic_tree, toy_tree};

    #[test]
    fn sparrow_instance_has_gold_at_exactly_one_letter() {
        let tree = toy_tree();
        let inst = build_instance(&tree, "sparrow", "img://1", &SamplerPolicy::Uniform, 7).unwrap();
        let q = &inst.per_level[2];
        let hits = q.options.iter().filter(|o| *o == "sparrow").count();
        assert_eq!(hits, 1);
        assert_eq!(q.gold_label(), "sparrow");
        // Level 3 of the toy tree has three labels total, so two distractors.
        assert_eq!(q.options.len(), 3);
        // Root level is a singleton: one option only.
        assert_eq!(inst.per_level[0].options.len(), 1);
        assert_eq!(inst.per_level[0].gold_letter, Letter::A);
    }

    #[test]
    fn identical_inputs_give_byte_identical_instances() {
        let tree = toy_tree();
        let a = build_instance(&tree, "sparrow", "img://1", &SamplerPolicy::Uniform, 7).unwrap();
        let b = build_instance(&tree, "sparrow", "img://1", &SamplerPolicy::Uniform, 7).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn gold_letter_frequencies_are_near_uniform() {
        let tree = synthetic_tree("gen", 4, 4).unwrap();
        let instances = generate_instances(&tree, 1000, &SamplerPolicy::Uniform, 13).unwrap();
        let mut counts = [0usize; 4];
        let mut total = 0usize;
        for inst in &instances {
            for q in &inst.per_level {
                if q.options.len() == 4 {
                    counts[q.gold_letter.index()] += 1;
                    total += 1;
                }
            }
        }
        for c in counts {
            let freq = c as f64 / total as f64;
            assert!((0.2..=0.3).contains(&freq), "letter frequency {freq}");
        }
    }

    #[test]
    fn letter_assignment_chi_square_uniform() {
        // Chi-square over 10k instances must not reject uniformity at
        // alpha = 0.01 (critical value 11.345 at 3 degrees of freedom).
        let tree = synthetic_tree("gen", 3, 4).unwrap();
        let instances = generate_instances(&tree, 10_000, &SamplerPolicy::Uniform, 99).unwrap();
        let mut counts = [0f64; 4];
        let mut total = 0f64;
        for inst in &instances {
            for q in &inst.per_level {
                if q.options.len() == 4 {
                    counts[q.gold_letter.index()] += 1.0;
                    total += 1.0;
                }
            }
        }
        let expected = total / 4.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        assert!(chi2 < 11.345, "chi-square {chi2} rejects uniformity");
    }

    #[test]
    fn sibling_only_candidate_is_returned() {
        let tree = toy_tree();
        let got =
            sample_distractors(&tree, "sparrow", 1, &SamplerPolicy::SiblingPreferring, 3).unwrap();
        assert_eq!(got, vec!["crow".to_string()]);
    }

    #[test]
    fn distinct_seeds_give_distinct_draws() {
        let tree = synthetic_tree("gen", 2, 9).unwrap();
        // Level 2 has 81 labels; two seeds drawing 3 of 80 candidates
        // collide with probability well under 1e-3 per pair, so across a
        // handful of seeds at least one pair must differ.
        let draws: Vec<Vec<String>> = (0..4)
            .map(|s| {
                sample_distractors(&tree, "taxon.0.0", 3, &SamplerPolicy::Uniform, s).unwrap()
            })
            .collect();
        assert!(draws.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn degenerate_weights_pin_the_draw() {
        let tree = toy_tree();
        let mut weights = BTreeMap::new();
        weights.insert("crow".to_string(), 5.0);
        let policy = SamplerPolicy::Weighted { weights };
        for seed in 0..5 {
            let got = sample_distractors(&tree, "carp", 1, &policy, seed).unwrap();
            assert_eq!(got, vec!["crow".to_string()]);
        }
    }

    #[test]
    fn no_candidates_errors() {
        let tree = toy_tree();
        assert!(matches!(
            sample_distractors(&tree, "animal", 1, &SamplerPolicy::Uniform, 0),
            Err(InstanceError::NoCandidates { .. })
        ));
    }

    #[test]
    fn options_all_come_from_the_gold_level() {
        let tree = synthetic_tree("gen", 5, 4).unwrap();
        let instances = generate_instances(&tree, 50, &SamplerPolicy::SiblingPreferring, 21).unwrap();
        for inst in &instances {
            for (idx, q) in inst.per_level.iter().enumerate() {
                let depth = idx + 1;
                let level_labels = tree.labels_at_depth(depth);
                for opt in &q.options {
                    assert!(level_labels.contains(opt), "{opt} not at depth {depth}");
                }
                let distinct: std::collections::HashSet<&String> = q.options.iter().collect();
                assert_eq!(distinct.len(), q.options.len(), "duplicate option");
                if depth > 1 {
                    assert_eq!(q.options.len(), 4);
                }
            }
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let tree = toy_tree();
        let instances = generate_instances(&tree, 5, &SamplerPolicy::Uniform, 1).unwrap();
        let mut buf = Vec::new();
        write_instances(&mut buf, Some(&serde_json::json!({"seed": 1})), &instances).unwrap();
        let back = read_instances(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(back, instances);
    }

    #[test]
    fn split_sizes_follow_the_rounding_rule() {
        let ids: Vec<String> = (0..100).map(|i| format!("i{i}")).collect();
        let m = split_ids(&ids, 42);
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (60, 20, 20));
        let ids10: Vec<String> = (0..10).map(|i| format!("i{i}")).collect();
        let m10 = split_ids(&ids10, 42);
        assert_eq!((m10.train.len(), m10.val.len(), m10.test.len()), (6, 2, 2));
        // Disjoint.
        let mut all: Vec<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
    }
}
