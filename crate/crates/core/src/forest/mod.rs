//! Fuzzy exemplar-split decision forest with per-node background rejectors.

mod rejector;
mod split;
mod train;

pub use rejector::{
    foreground_distribution, known_row, reject, train_rejector, RejectorObjective, RejectorParams,
};
pub use split::{
    entropy, node_distribution, route, route_for_margin, split_energy, split_margin, Route, SplitParams,
    ValueHistogram,
};
pub use train::{train_forest, train_tree};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSource, Layout};

pub(crate) use rejector::reject_counted;
pub(crate) use split::split_margin_counted;

/// Work done while answering one query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCost {
    /// `dim_distance` evaluations in split functions.
    pub split_comparisons: u64,
    /// Known-table lookups in rejectors.
    pub rejector_lookups: u64,
    /// Nodes visited.
    pub nodes: u64,
}

impl QueryCost {
    pub fn tree_comparisons(&self) -> u64 {
        self.split_comparisons + self.rejector_lookups
    }
}

impl std::ops::AddAssign for QueryCost {
    fn add_assign(&mut self, o: QueryCost) {
        self.split_comparisons += o.split_comparisons;
        self.rejector_lookups += o.rejector_lookups;
        self.nodes += o.nodes;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    /// Coordinates per split selector (d').
    pub selector_len: usize,
    /// Split candidates sampled per node.
    pub candidates: usize,
    pub fuzzy_margin: f64,
    pub accept_floor: f64,
    pub density_floor: f64,
    /// `None` picks 8 for a single object and 9 for several.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub rejector_objective: RejectorObjective,
    /// Templates sampled to bracket the split threshold.
    pub tau_subsample: usize,
    /// Further rounds of `candidates` drawn when no candidate has positive
    /// energy.
    pub extra_rounds: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 5,
            selector_len: 8,
            candidates: 32,
            fuzzy_margin: 1.0,
            accept_floor: 0.6,
            density_floor: 0.05,
            max_depth: None,
            min_leaf: 4,
            rejector_objective: RejectorObjective::Entropy,
            tau_subsample: 32,
            extra_rounds: 4,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.trees == 0 {
            return bad("forest needs at least one tree");
        }
        if self.selector_len == 0 || self.candidates == 0 {
            return bad("selector_len and candidates must be >= 1");
        }
        if !(self.fuzzy_margin >= 0.0) {
            return bad("fuzzy_margin must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.accept_floor) {
            return bad("accept_floor must lie in [0, 1]");
        }
        if !(self.density_floor > 0.0 && self.density_floor < 1.0) {
            return bad("density_floor must lie in (0, 1)");
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be >= 1");
        }
        Ok(())
    }

    pub fn effective_max_depth(&self, objects: usize) -> usize {
        self.max_depth.unwrap_or(if objects > 1 { 9 } else { 8 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub rejector: RejectorParams,
    pub body: NodeBody,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NodeBody {
    Split {
        params: SplitParams,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        templates: Vec<u32>,
    },
}

/// Outcome of sending a query down one tree or the whole forest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryResult {
    Rejected { depth: usize },
    Candidates(Vec<u32>),
}

impl QueryResult {
    pub fn candidates(&self) -> Option<&[u32]> {
        match self {
            QueryResult::Candidates(c) => Some(c),
            QueryResult::Rejected { .. } => None,
        }
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, QueryResult::Rejected { .. })
    }
}

impl TreeNode {
    pub fn leaf(rejector: RejectorParams, templates: Vec<u32>) -> Self {
        TreeNode {
            rejector,
            body: NodeBody::Leaf { templates },
        }
    }

    pub fn depth(&self) -> usize {
        match &self.body {
            NodeBody::Leaf { .. } => 0,
            NodeBody::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// `(depth, template ids)` of every leaf, left to right.
    pub fn leaves(&self) -> Vec<(usize, &[u32])> {
        let mut out = Vec::new();
        let mut stack = vec![(self, 0usize)];
        while let Some((n, d)) = stack.pop() {
            match &n.body {
                NodeBody::Leaf { templates } => out.push((d, templates.as_slice())),
                NodeBody::Split { left, right, .. } => {
                    stack.push((right, d + 1));
                    stack.push((left, d + 1));
                }
            }
        }
        out
    }

    pub fn node_count(&self) -> usize {
        match &self.body {
            NodeBody::Leaf { .. } => 1,
            NodeBody::Split { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }
}

/// Send `v` down `tree`. Each node first runs its rejector; inside the fuzzy
/// band the query follows the side of the threshold it falls on.
pub fn descend<S: FeatureSource + ?Sized>(tree: &TreeNode, v: &S) -> QueryResult {
    descend_counted(tree, v, &mut QueryCost::default())
}

pub fn descend_counted<S: FeatureSource + ?Sized>(tree: &TreeNode, v: &S, cost: &mut QueryCost) -> QueryResult {
    let (node, depth, rejected) = walk(tree, v, cost);
    match &node.body {
        _ if rejected => QueryResult::Rejected { depth },
        NodeBody::Leaf { templates } => QueryResult::Candidates(templates.clone()),
        NodeBody::Split { .. } => unreachable!("walk stops at leaves"),
    }
}

/// The node where `v` stops and its depth: either the rejecting node or the
/// accepting leaf.
fn walk<'a, S: FeatureSource + ?Sized>(tree: &'a TreeNode, v: &S, cost: &mut QueryCost) -> (&'a TreeNode, usize, bool) {
    let mut node = tree;
    let mut depth = 0;
    loop {
        cost.nodes += 1;
        if reject_counted(v, &node.rejector, cost) {
            return (node, depth, true);
        }
        match &node.body {
            NodeBody::Leaf { .. } => return (node, depth, false),
            NodeBody::Split { params, left, right } => {
                let m = split_margin_counted(v, params, cost);
                node = if split::test_time_left(m, params.fuzzy_margin) { left } else { right };
                depth += 1;
            }
        }
    }
}

/// Summary of a trained tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeStats {
    pub depth: usize,
    pub nodes: usize,
    /// Leaf count per depth.
    pub depth_histogram: Vec<usize>,
    pub leaves: usize,
    pub min_leaf_size: usize,
    pub max_leaf_size: usize,
    pub mean_leaf_size: f64,
    /// Sum of leaf sizes; exceeds the template count by the fuzzy duplicates.
    pub total_leaf_entries: usize,
}

impl TreeStats {
    pub fn of(tree: &TreeNode) -> Self {
        let leaves = tree.leaves();
        let depth = tree.depth();
        let mut depth_histogram = vec![0; depth + 1];
        for (d, _) in &leaves {
            depth_histogram[*d] += 1;
        }
        let sizes: Vec<usize> = leaves.iter().map(|(_, t)| t.len()).collect();
        let total: usize = sizes.iter().sum();
        TreeStats {
            depth,
            nodes: tree.node_count(),
            depth_histogram,
            leaves: sizes.len(),
            min_leaf_size: sizes.iter().copied().min().unwrap_or(0),
            max_leaf_size: sizes.iter().copied().max().unwrap_or(0),
            mean_leaf_size: total as f64 / sizes.len().max(1) as f64,
            total_leaf_entries: total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub layout: Layout,
    /// Number of templates the forest was trained on.
    pub template_count: usize,
    pub config: ForestConfig,
    pub trees: Vec<TreeNode>,
}

impl Forest {
    pub fn descriptor_len(&self) -> usize {
        self.layout.descriptor_len()
    }

    /// Union of the candidates of every accepting tree, or the shallowest
    /// rejection depth when all trees reject.
    pub fn query<S: FeatureSource + ?Sized>(&self, v: &S) -> QueryResult {
        self.query_counted(v, &mut QueryCost::default())
    }

    pub fn query_counted<S: FeatureSource + ?Sized>(&self, v: &S, cost: &mut QueryCost) -> QueryResult {
        let mut ids: Vec<u32> = Vec::new();
        let mut any = false;
        let mut min_depth = usize::MAX;
        for t in &self.trees {
            match descend_counted(t, v, cost) {
                QueryResult::Rejected { depth } => min_depth = min_depth.min(depth),
                QueryResult::Candidates(c) => {
                    any = true;
                    ids.extend(c);
                }
            }
        }
        if !any {
            return QueryResult::Rejected { depth: min_depth };
        }
        ids.sort_unstable();
        ids.dedup();
        QueryResult::Candidates(ids)
    }

    /// True when every tree rejects `v` at an internal node, i.e. no tree
    /// lets it reach a leaf.
    pub fn rejected_before_leaf<S: FeatureSource + ?Sized>(&self, v: &S) -> bool {
        self.trees.iter().all(|t| {
            let (node, _, rejected) = walk(t, v, &mut QueryCost::default());
            rejected && matches!(node.body, NodeBody::Split { .. })
        })
    }

    pub fn stats(&self) -> Vec<TreeStats> {
        self.trees.iter().map(TreeStats::of).collect()
    }
}

pub fn forest_query<S: FeatureSource + ?Sized>(forest: &Forest, v: &S) -> QueryResult {
    forest.query(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Modality, QuantizedValue};

    fn q(v: u8) -> QuantizedValue {
        QuantizedValue::new(v).unwrap()
    }

    fn strict_rejector() -> RejectorParams {
        RejectorParams {
            selector: vec![0, 1],
            known: vec![0b1, 0b1],
            accept_floor: 0.6,
            density_floor: 0.05,
        }
    }

    #[test]
    fn zero_descriptor_is_rejected_at_root() {
        let tree = TreeNode::leaf(strict_rejector(), vec![0]);
        assert_eq!(descend(&tree, &[q(0), q(0)][..]), QueryResult::Rejected { depth: 0 });
        assert_eq!(descend(&tree, &[q(1), q(1)][..]), QueryResult::Candidates(vec![0]));
    }

    #[test]
    fn single_leaf_returns_everything() {
        let tree = TreeNode::leaf(RejectorParams::always_accept(0.6, 0.05), vec![0, 1, 2]);
        assert_eq!(descend(&tree, &[q(0)][..]), QueryResult::Candidates(vec![0, 1, 2]));
    }

    #[test]
    fn forest_union_and_rejection_depth() {
        let accept = RejectorParams::always_accept(0.6, 0.05);
        let split = |t: Vec<u32>| TreeNode {
            rejector: accept.clone(),
            body: NodeBody::Split {
                params: SplitParams {
                    selector: vec![0],
                    exemplar: vec![q(1)],
                    tau: 1.0,
                    fuzzy_margin: 0.0,
                },
                left: Box::new(TreeNode::leaf(strict_rejector(), t)),
                right: Box::new(TreeNode::leaf(accept.clone(), vec![9])),
            },
        };
        let layout = Layout::grid(2, 1, 1, vec![Modality::ColourGradient]).unwrap();
        let forest = Forest {
            layout,
            template_count: 10,
            config: ForestConfig::default(),
            trees: vec![split(vec![1, 2]), split(vec![2, 3])],
        };
        assert_eq!(forest.query(&[q(1), q(1)][..]), QueryResult::Candidates(vec![1, 2, 3]));
        // distance 4 from the exemplar goes right
        assert_eq!(forest.query(&[q(5), q(1)][..]), QueryResult::Candidates(vec![9]));
        // left leaf rejects at depth 1 in both trees
        assert_eq!(forest.query(&[q(1), q(0)][..]), QueryResult::Rejected { depth: 1 });
        let one = Forest {
            trees: vec![forest.trees[0].clone()],
            ..forest.clone()
        };
        let v = [q(1), q(1)];
        assert_eq!(one.query(&v[..]), descend(&one.trees[0], &v[..]));
    }
}
