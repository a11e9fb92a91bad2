//! Rooted taxonomy trees: data model, validation, and serialization.
//!
//! A [`TaxonomyTree`] is immutable after load and safe to share across
//! threads. Depths are 1-based (the root sits at depth 1) and the ordered
//! `levels` list names one level per depth. Leaves may sit at different
//! depths; the per-sample path length is the leaf depth.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque node identifier.
pub type NodeId = String;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("malformed taxonomy document: {0}")]
    Malformed(String),
    #[error("taxonomy has no root node (a node with null parent and depth 1)")]
    NoRoot,
    #[error("taxonomy has multiple roots: {0:?}")]
    MultipleRoots(Vec<NodeId>),
    #[error("duplicate node id `{0}`")]
    DuplicateNodeId(NodeId),
    #[error("orphan node `{id}`: parent `{parent}` does not exist")]
    OrphanNode { id: NodeId, parent: NodeId },
    #[error("cycle detected through node `{0}`")]
    CycleDetected(NodeId),
    #[error("depth gap at node `{id}`: depth {depth} but parent depth {parent_depth}")]
    DepthGap {
        id: NodeId,
        depth: usize,
        parent_depth: usize,
    },
    #[error("root node `{id}` must have depth 1, found {depth}")]
    BadRootDepth { id: NodeId, depth: usize },
    #[error("duplicate sibling label `{label}` under parent `{parent}`")]
    DuplicateSiblingLabel { label: String, parent: String },
    #[error("node `{id}` at depth {depth} exceeds the {levels} declared levels")]
    DepthBeyondLevels {
        id: NodeId,
        depth: usize,
        levels: usize,
    },
    #[error("levels list is empty")]
    EmptyLevels,
    #[error("duplicate level name `{0}`")]
    DuplicateLevelName(String),
    #[error("unknown node id `{0}`")]
    UnknownNode(NodeId),
    #[error("node `{0}` is not a leaf")]
    NotALeaf(NodeId),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One node of the taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxNode {
    pub id: NodeId,
    pub label: String,
    pub depth: usize,
    pub parent: Option<NodeId>,
}

/// Root-to-leaf path through the tree.
///
/// `node_ids` and `labels` are parallel; the first entry is always the
/// root and consecutive entries are parent-child edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxPath {
    pub node_ids: Vec<NodeId>,
    pub labels: Vec<String>,
}

impl TaxPath {
    /// Path length `L_i` (number of levels this sample spans).
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }
}

/// On-disk schema: `{name, levels: [string], nodes: [{id, label, depth, parent|null}]}`.
#[derive(Debug, Serialize, Deserialize)]
struct TaxonomyDoc {
    name: String,
    levels: Vec<String>,
    nodes: Vec<TaxNode>,
}

/// Validated, immutable taxonomy tree.
#[derive(Debug, Clone)]
pub struct TaxonomyTree {
    name: String,
    levels: Vec<String>,
    nodes: Vec<TaxNode>,
    index: HashMap<NodeId, usize>,
    /// Children indices per node, sorted by child label.
    children: Vec<Vec<usize>>,
    root: usize,
    /// Levels holding a single distinct label; data for reports, never behavior.
    singleton_levels: Vec<bool>,
    /// Distinct labels per depth (1-based depth - 1), sorted.
    labels_by_depth: Vec<Vec<String>>,
}

impl TaxonomyTree {
    /// Build and validate a tree from its parts.
    pub fn new(
        name: String,
        levels: Vec<String>,
        nodes: Vec<TaxNode>,
    ) -> Result<Self, TaxonomyError> {
        if levels.is_empty() {
            return Err(TaxonomyError::EmptyLevels);
        }
        {
            let mut seen = HashSet::new();
            for level in &levels {
                if !seen.insert(level.clone()) {
                    return Err(TaxonomyError::DuplicateLevelName(level.clone()));
                }
            }
        }

        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateNodeId(node.id.clone()));
            }
        }

        let mut roots = Vec::new();
        for node in &nodes {
            match &node.parent {
                None => roots.push(node.id.clone()),
                Some(p) => {
                    if !index.contains_key(p) {
                        return Err(TaxonomyError::OrphanNode {
                            id: node.id.clone(),
                            parent: p.clone(),
                        });
                    }
                }
            }
        }
        let root = match roots.len() {
            0 => return Err(TaxonomyError::NoRoot),
            1 => index[&roots[0]],
            _ => return Err(TaxonomyError::MultipleRoots(roots)),
        };
        if nodes[root].depth != 1 {
            return Err(TaxonomyError::BadRootDepth {
                id: nodes[root].id.clone(),
                depth: nodes[root].depth,
            });
        }

        // Walk every parent chain once; a chain that revisits a node or
        // outruns the node count is a cycle.
        for node in &nodes {
            let mut seen = HashSet::new();
            let mut cur = node;
            while let Some(parent_id) = &cur.parent {
                if !seen.insert(cur.id.clone()) {
                    return Err(TaxonomyError::CycleDetected(node.id.clone()));
                }
                if seen.len() > nodes.len() {
                    return Err(TaxonomyError::CycleDetected(node.id.clone()));
                }
                cur = &nodes[index[parent_id]];
            }
        }

        for node in &nodes {
            if let Some(parent_id) = &node.parent {
                let parent_depth = nodes[index[parent_id]].depth;
                if node.depth != parent_depth + 1 {
                    return Err(TaxonomyError::DepthGap {
                        id: node.id.clone(),
                        depth: node.depth,
                        parent_depth,
                    });
                }
            }
            if node.depth > levels.len() {
                return Err(TaxonomyError::DepthBeyondLevels {
                    id: node.id.clone(),
                    depth: node.depth,
                    levels: levels.len(),
                });
            }
        }

        let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            if let Some(parent_id) = &node.parent {
                children[index[parent_id]].push(i);
            }
        }
        for child_list in &mut children {
            child_list.sort_by(|&a, &b| nodes[a].label.cmp(&nodes[b].label));
        }
        for (i, child_list) in children.iter().enumerate() {
            let mut seen = HashSet::new();
            for &c in child_list {
                if !seen.insert(nodes[c].label.as_str()) {
                    return Err(TaxonomyError::DuplicateSiblingLabel {
                        label: nodes[c].label.clone(),
                        parent: nodes[i].id.clone(),
                    });
                }
            }
        }

        let mut labels_by_depth: Vec<HashSet<String>> = vec![HashSet::new(); levels.len()];
        for node in &nodes {
            labels_by_depth[node.depth - 1].insert(node.label.clone());
        }
        let labels_by_depth: Vec<Vec<String>> = labels_by_depth
            .into_iter()
            .map(|set| {
                let mut v: Vec<String> = set.into_iter().collect();
                v.sort();
                v
            })
            .collect();
        let singleton_levels = labels_by_depth.iter().map(|v| v.len() <= 1).collect();

        Ok(Self {
            name,
            levels,
            nodes,
            index,
            children,
            root,
            singleton_levels,
            labels_by_depth,
        })
    }

    /// Parse and validate a taxonomy document.
    pub fn from_json_str(json: &str) -> Result<Self, TaxonomyError> {
        let doc: TaxonomyDoc =
            serde_json::from_str(json).map_err(|e| TaxonomyError::Malformed(e.to_string()))?;
        Self::new(doc.name, doc.levels, doc.nodes)
    }

    /// Load a taxonomy document from a file.
    pub fn load(path: &std::path::Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Serialize back to the document schema. Nodes are emitted sorted by
    /// (depth, id), so output is deterministic and round-trip stable.
    pub fn to_json_string(&self) -> String {
        let mut nodes = self.nodes.clone();
        nodes.sort_by(|a, b| (a.depth, &a.id).cmp(&(b.depth, &b.id)));
        let doc = TaxonomyDoc {
            name: self.name.clone(),
            levels: self.levels.clone(),
            nodes,
        };
        serde_json::to_string_pretty(&doc).expect("taxonomy serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    /// Number of declared levels `L` (maximum possible path length).
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn root(&self) -> &TaxNode {
        &self.nodes[self.root]
    }

    pub fn node(&self, id: &str) -> Option<&TaxNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TaxNode] {
        &self.nodes
    }

    /// Children of a node, sorted by label.
    pub fn children_of(&self, id: &str) -> Result<Vec<&TaxNode>, TaxonomyError> {
        let &i = self
            .index
            .get(id)
            .ok_or_else(|| TaxonomyError::UnknownNode(id.to_string()))?;
        Ok(self.children[i].iter().map(|&c| &self.nodes[c]).collect())
    }

    pub fn is_leaf(&self, id: &str) -> Result<bool, TaxonomyError> {
        let &i = self
            .index
            .get(id)
            .ok_or_else(|| TaxonomyError::UnknownNode(id.to_string()))?;
        Ok(self.children[i].is_empty())
    }

    /// All leaves, sorted by id for determinism.
    pub fn leaves(&self) -> Vec<&TaxNode> {
        let mut out: Vec<&TaxNode> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| self.children[*i].is_empty())
            .map(|(_, n)| n)
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Root-to-leaf path for a leaf node.
    pub fn path_for_leaf(&self, leaf: &str) -> Result<TaxPath, TaxonomyError> {
        if !self.is_leaf(leaf)? {
            return Err(TaxonomyError::NotALeaf(leaf.to_string()));
        }
        let mut ids = Vec::new();
        let mut cur = self.node(leaf).expect("checked above");
        loop {
            ids.push(cur.id.clone());
            match &cur.parent {
                Some(p) => cur = &self.nodes[self.index[p]],
                None => break,
            }
        }
        ids.reverse();
        let labels = ids
            .iter()
            .map(|id| self.nodes[self.index[id]].label.clone())
            .collect();
        Ok(TaxPath {
            node_ids: ids,
            labels,
        })
    }

    /// All nodes sharing the node's parent, including the node itself,
    /// sorted by label. The root is its own only sibling.
    pub fn siblings_at(&self, id: &str) -> Result<Vec<&TaxNode>, TaxonomyError> {
        let node = self
            .node(id)
            .ok_or_else(|| TaxonomyError::UnknownNode(id.to_string()))?;
        match &node.parent {
            None => Ok(vec![node]),
            Some(p) => self.children_of(p),
        }
    }

    /// Distinct labels at a 1-based depth, sorted.
    pub fn labels_at_depth(&self, depth: usize) -> &[String] {
        &self.labels_by_depth[depth - 1]
    }

    /// Per-level singleton flags (levels holding one distinct label).
    pub fn singleton_levels(&self) -> &[bool] {
        &self.singleton_levels
    }
}

/// Generate a full `branching`-ary synthetic tree with `question_levels`
/// branching levels under a singleton root, in the style of biological
/// taxonomies whose top rank holds a single label.
///
/// Node labels are path-coded (`taxon.2.0.3`), so label-sorted sibling
/// order equals child-index order.
pub fn synthetic_tree(
    name: &str,
    question_levels: usize,
    branching: usize,
) -> Result<TaxonomyTree, TaxonomyError> {
    assert!(
        (1..=9).contains(&branching),
        "path-coded labels support branching 1..=9"
    );
    assert!(question_levels >= 1, "need at least one branching level");
    let mut levels = vec!["root".to_string()];
    for l in 1..=question_levels {
        levels.push(format!("level-{l}"));
    }
    let mut nodes = vec![TaxNode {
        id: "taxon".into(),
        label: "taxon".into(),
        depth: 1,
        parent: None,
    }];
    let mut frontier: Vec<String> = vec!["taxon".into()];
    for depth in 2..=(question_levels + 1) {
        let mut next = Vec::with_capacity(frontier.len() * branching);
        for parent in &frontier {
            for i in 0..branching {
                let id = format!("{parent}.{i}");
                nodes.push(TaxNode {
                    id: id.clone(),
                    label: id.clone(),
                    depth,
                    parent: Some(parent.clone()),
                });
                next.push(id);
            }
        }
        frontier = next;
    }
    TaxonomyTree::new(name.to_string(), levels, nodes)
}

/// Build the mapping from each non-root path node to its index among its
/// label-sorted siblings; used wherever sibling position stands in for an
/// option letter.
pub fn sibling_index(tree: &TaxonomyTree, id: &str) -> Result<usize, TaxonomyError> {
    let siblings = tree.siblings_at(id)?;
    Ok(siblings
        .iter()
        .position(|n| n.id == id)
        .expect("node among its own siblings"))
}

#[cfg(test)]
pub(crate) fn toy_tree() -> TaxonomyTree {
    // {animal -> {bird -> {sparrow, crow}, fish -> {carp}}}
    let json = r#"{
        "name": "toy",
        "levels": ["kingdom", "class", "species"],
        "nodes": [
            {"id": "animal", "label": "animal", "depth": 1, "parent": null},
            {"id": "bird", "label": "bird", "depth": 2, "parent": "animal"},
            {"id": "fish", "label": "fish", "depth": 2, "parent": "animal"},
            {"id": "sparrow", "label": "sparrow", "depth": 3, "parent": "bird"},
            {"id": "crow", "label": "crow", "depth": 3, "parent": "bird"},
            {"id": "carp", "label": "carp", "depth": 3, "parent": "fish"}
        ]
    }"#;
    TaxonomyTree::from_json_str(json).expect("toy tree is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn toy_tree_loads_with_expected_shape() {
        let tree = toy_tree();
        assert_eq!(tree.depth(), 3);
        assert_eq!(tree.len(), 6);
        assert_eq!(tree.root().id, "animal");
        assert!(tree.singleton_levels()[0]);
        assert!(!tree.singleton_levels()[1]);
    }

    #[test]
    fn orphan_node_is_rejected() {
        let json = r#"{
            "name": "bad", "levels": ["a", "b"],
            "nodes": [
                {"id": "r", "label": "r", "depth": 1, "parent": null},
                {"id": "x", "label": "x", "depth": 2, "parent": "missing"}
            ]
        }"#;
        match TaxonomyTree::from_json_str(json) {
            Err(TaxonomyError::OrphanNode { id, parent }) => {
                assert_eq!(id, "x");
                assert_eq!(parent, "missing");
            }
            other => panic!("expected orphan error, got {other:?}"),
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let json = r#"{
            "name": "bad", "levels": ["a", "b", "c"],
            "nodes": [
                {"id": "r", "label": "r", "depth": 1, "parent": null},
                {"id": "x", "label": "x", "depth": 2, "parent": "y"},
                {"id": "y", "label": "y", "depth": 3, "parent": "x"}
            ]
        }"#;
        assert!(matches!(
            TaxonomyTree::from_json_str(json),
            Err(TaxonomyError::CycleDetected(_))
        ));
    }

    #[test]
    fn depth_gap_is_rejected() {
        let json = r#"{
            "name": "bad", "levels": ["a", "b", "c"],
            "nodes": [
                {"id": "r", "label": "r", "depth": 1, "parent": null},
                {"id": "x", "label": "x", "depth": 3, "parent": "r"}
            ]
        }"#;
        assert!(matches!(
            TaxonomyTree::from_json_str(json),
            Err(TaxonomyError::DepthGap { .. })
        ));
    }

    #[test]
    fn duplicate_sibling_label_is_rejected() {
        let json = r#"{
            "name": "bad", "levels": ["a", "b"],
            "nodes": [
                {"id": "r", "label": "r", "depth": 1, "parent": null},
                {"id": "x1", "label": "same", "depth": 2, "parent": "r"},
                {"id": "x2", "label": "same", "depth": 2, "parent": "r"}
            ]
        }"#;
        assert!(matches!(
            TaxonomyTree::from_json_str(json),
            Err(TaxonomyError::DuplicateSiblingLabel { .. })
        ));
    }

    #[test]
    fn generated_tree_has_expected_node_count() {
        // Full 4-ary tree with 6 branching levels: sum of 4^d for d in 0..=6.
        let tree = synthetic_tree("gen", 6, 4).unwrap();
        let expected: usize = (0..=6).map(|d| 4usize.pow(d)).sum();
        assert_eq!(expected, 5461);
        assert_eq!(tree.len(), expected);
        assert_eq!(tree.leaves().len(), 4096);
        assert_eq!(tree.depth(), 7);
    }

    #[test]
    fn path_for_leaf_on_toy_tree() {
        let tree = toy_tree();
        let path = tree.path_for_leaf("sparrow").unwrap();
        assert_eq!(path.labels, vec!["animal", "bird", "sparrow"]);
        assert_eq!(path.len(), 3);
    }

    #[test]
    fn path_for_degenerate_single_node_tree() {
        let json = r#"{
            "name": "one", "levels": ["only"],
            "nodes": [{"id": "r", "label": "r", "depth": 1, "parent": null}]
        }"#;
        let tree = TaxonomyTree::from_json_str(json).unwrap();
        let path = tree.path_for_leaf("r").unwrap();
        assert_eq!(path.node_ids, vec!["r"]);
    }

    #[test]
    fn path_for_non_leaf_errors() {
        let tree = toy_tree();
        assert!(matches!(
            tree.path_for_leaf("bird"),
            Err(TaxonomyError::NotALeaf(_))
        ));
        assert!(matches!(
            tree.path_for_leaf("nope"),
            Err(TaxonomyError::UnknownNode(_))
        ));
    }

    #[test]
    fn random_leaf_path_matches_parent_walk_oracle() {
        let tree = synthetic_tree("gen", 6, 4).unwrap();
        let leaves = tree.leaves();
        let mut rng = crate::util::seeded_rng(11, &[1]);
        for _ in 0..50 {
            let leaf = leaves[rng.gen_range(0..leaves.len())];
            let path = tree.path_for_leaf(&leaf.id).unwrap();
            // Independent oracle: collect ids by walking parent pointers.
            let mut oracle = Vec::new();
            let mut cur = Some(leaf.id.clone());
            while let Some(id) = cur {
                let node = tree.node(&id).unwrap();
                oracle.push(id.clone());
                cur = node.parent.clone();
            }
            oracle.reverse();
            assert_eq!(path.node_ids, oracle);
        }
    }

    #[test]
    fn siblings_match_full_scan_oracle() {
        let tree = synthetic_tree("gen", 4, 3).unwrap();
        let mut rng = crate::util::seeded_rng(5, &[2]);
        let ids: Vec<&str> = tree.nodes().iter().map(|n| n.id.as_str()).collect();
        for _ in 0..40 {
            let id = ids[rng.gen_range(0..ids.len())];
            let got: Vec<String> = tree
                .siblings_at(id)
                .unwrap()
                .iter()
                .map(|n| n.id.clone())
                .collect();
            let parent = tree.node(id).unwrap().parent.clone();
            let mut oracle: Vec<String> = tree
                .nodes()
                .iter()
                .filter(|n| n.parent == parent)
                .map(|n| n.id.clone())
                .collect();
            oracle.sort_by_key(|i| tree.node(i).unwrap().label.clone());
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn root_is_its_own_sibling() {
        let tree = toy_tree();
        let sibs = tree.siblings_at("animal").unwrap();
        assert_eq!(sibs.len(), 1);
        assert_eq!(sibs[0].id, "animal");
    }

    #[test]
    fn serialize_roundtrip_preserves_structure() {
        let tree = synthetic_tree("gen", 3, 3).unwrap();
        let json = tree.to_json_string();
        let back = TaxonomyTree::from_json_str(&json).unwrap();
        assert_eq!(back.levels(), tree.levels());
        assert_eq!(back.len(), tree.len());
        for node in tree.nodes() {
            let other = back.node(&node.id).unwrap();
            assert_eq!(other, node);
        }
        // Leaf count equals distinct root-to-leaf path count.
        let paths: std::collections::HashSet<Vec<String>> = tree
            .leaves()
            .iter()
            .map(|l| tree.path_for_leaf(&l.id).unwrap().node_ids)
            .collect();
        assert_eq!(paths.len(), tree.leaves().len());
    }
}
