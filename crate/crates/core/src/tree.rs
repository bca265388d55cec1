//! Category tree construction and validation.
//!
//! The tree is built top-down. A node holding categories `C` becomes:
//!
//! - a leaf when `|C| == 1`;
//! - one singleton leaf child per category when `|C| < K` (no point
//!   clustering) or when the node sits at the depth cap `L` (guarantees
//!   every leaf is a single category, at the price of fan-out above `K`
//!   for unbalanced splits);
//! - otherwise at most `K` children from spectral partitioning of the
//!   affinity submatrix over `C`.
//!
//! Children are ordered by their smallest category id and node ids are
//! assigned post-order, so a child id is always smaller than its
//! parent's and the root id is `nodes.len() - 1`.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::metric::AffinityMatrix;
use crate::rng::derive_seed;
use crate::spectral::spectral_partition;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub id: usize,
    /// Root is 0; children are parent + 1.
    pub depth: usize,
    /// Dense category ids, ascending.
    pub categories: Vec<usize>,
    /// Child node ids ordered by smallest category id.
    pub children: Vec<usize>,
    pub parent: Option<usize>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisualTree {
    /// Indexed by node id.
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    /// Branching bound `K` the tree was built with.
    pub branching: usize,
    /// Depth cap `L` the tree was built with.
    pub max_depth: usize,
    pub n_categories: usize,
}

impl VisualTree {
    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Total number of edges, which is also the classifier count.
    pub fn n_edges(&self) -> usize {
        self.nodes.len() - 1
    }

    /// The single category of a leaf node.
    pub fn leaf_category(&self, id: usize) -> usize {
        debug_assert!(self.nodes[id].is_leaf());
        self.nodes[id].categories[0]
    }

    /// Leaf node id per dense category id.
    pub fn leaf_of_category(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.n_categories];
        for n in &self.nodes {
            if n.is_leaf() {
                out[n.categories[0]] = n.id;
            }
        }
        out
    }
}

struct Temp {
    depth: usize,
    categories: Vec<usize>,
    children: Vec<Temp>,
}

fn grow(
    categories: Vec<usize>,
    depth: usize,
    affinity: &AffinityMatrix,
    means: Option<&Array2<f64>>,
    k: usize,
    l: usize,
    seed: u64,
) -> Result<Temp> {
    if categories.len() == 1 {
        return Ok(Temp {
            depth,
            categories,
            children: Vec::new(),
        });
    }
    if depth >= l || categories.len() < k {
        let children = categories
            .iter()
            .map(|&c| Temp {
                depth: depth + 1,
                categories: vec![c],
                children: Vec::new(),
            })
            .collect();
        return Ok(Temp {
            depth,
            categories,
            children,
        });
    }

    let sub = affinity.submatrix(&categories);
    let sub_means = means.map(|m| m.select(Axis(0), &categories));
    let split_seed = derive_seed(seed, "split", &[depth as u64, categories[0] as u64]);
    let part = spectral_partition(&sub, k, split_seed, sub_means.as_ref())?;

    let mut groups: Vec<Vec<usize>> = part
        .groups()
        .into_iter()
        .map(|g| g.into_iter().map(|i| categories[i]).collect())
        .collect();
    groups.sort_by_key(|g: &Vec<usize>| g[0]);

    let mut children = Vec::with_capacity(groups.len());
    for g in groups {
        children.push(grow(g, depth + 1, affinity, means, k, l, seed)?);
    }
    Ok(Temp {
        depth,
        categories,
        children,
    })
}

fn number(temp: Temp, nodes: &mut Vec<TreeNode>) -> usize {
    let child_ids: Vec<usize> = temp
        .children
        .into_iter()
        .map(|c| number(c, nodes))
        .collect();
    let id = nodes.len();
    for &c in &child_ids {
        nodes[c].parent = Some(id);
    }
    nodes.push(TreeNode {
        id,
        depth: temp.depth,
        categories: temp.categories,
        children: child_ids,
        parent: None,
    });
    id
}

/// Builds a tree over all categories of `affinity` with branching bound
/// `k >= 2` and depth cap `l >= 1`.
pub fn build_tree(affinity: &AffinityMatrix, k: usize, l: usize, seed: u64) -> Result<VisualTree> {
    build_inner(affinity, None, k, l, seed)
}

/// Like [`build_tree`] but passing per-category mean vectors (one row
/// per category) for the partitioner's degenerate-affinity fallback.
pub fn build_tree_with_means(
    affinity: &AffinityMatrix,
    means: &Array2<f64>,
    k: usize,
    l: usize,
    seed: u64,
) -> Result<VisualTree> {
    if means.nrows() != affinity.len() {
        return Err(Error::InvalidParam(format!(
            "means have {} rows, affinity has {}",
            means.nrows(),
            affinity.len()
        )));
    }
    build_inner(affinity, Some(means), k, l, seed)
}

fn build_inner(
    affinity: &AffinityMatrix,
    means: Option<&Array2<f64>>,
    k: usize,
    l: usize,
    seed: u64,
) -> Result<VisualTree> {
    let n = affinity.len();
    if n == 0 {
        return Err(Error::InvalidParam("no categories".into()));
    }
    if k < 2 {
        return Err(Error::InvalidParam("branching must be >= 2".into()));
    }
    if l < 1 {
        return Err(Error::InvalidParam("depth must be >= 1".into()));
    }
    let temp = grow((0..n).collect(), 0, affinity, means, k, l, seed)?;
    let mut nodes = Vec::new();
    let root = number(temp, &mut nodes);
    Ok(VisualTree {
        nodes,
        root,
        branching: k,
        max_depth: l,
        n_categories: n,
    })
}

/// Structural checks; returns one message per violation (empty = valid).
pub fn validate_tree(tree: &VisualTree) -> Vec<String> {
    let mut problems = Vec::new();
    let n_nodes = tree.nodes.len();
    let mut push = |msg: String| problems.push(msg);

    if tree.root >= n_nodes {
        return vec![format!("root id {} out of range", tree.root)];
    }
    if tree.nodes[tree.root].parent.is_some() {
        push("root has a parent".into());
    }

    for (i, node) in tree.nodes.iter().enumerate() {
        if node.id != i {
            push(format!("node at index {i} has id {}", node.id));
        }
        if node.categories.is_empty() {
            push(format!("node {i} has no categories"));
        }
        if !node.categories.windows(2).all(|w| w[0] < w[1]) {
            push(format!("node {i} categories not strictly ascending"));
        }
        if node.categories.len() > 1 && node.is_leaf() {
            push(format!("node {i} is a multi-category leaf"));
        }
        if i != tree.root && node.parent.is_none() {
            push(format!("node {i} has no parent"));
        }
        for &c in &node.children {
            if c >= n_nodes {
                push(format!("node {i} has out-of-range child {c}"));
                continue;
            }
            if c >= i {
                push(format!("node {i} has child {c} with non-smaller id"));
            }
            if tree.nodes[c].parent != Some(i) {
                push(format!("child {c} does not point back to parent {i}"));
            }
            if tree.nodes[c].depth != node.depth + 1 {
                push(format!("child {c} depth is not parent depth + 1"));
            }
        }
        if !node.is_leaf() {
            // Children ordered by smallest category; categories must be
            // exactly the disjoint union of child categories.
            let mins: Vec<usize> = node
                .children
                .iter()
                .filter(|&&c| c < n_nodes && !tree.nodes[c].categories.is_empty())
                .map(|&c| tree.nodes[c].categories[0])
                .collect();
            if !mins.windows(2).all(|w| w[0] < w[1]) {
                push(format!("node {i} children not ordered by min category"));
            }
            let mut union: Vec<usize> = node
                .children
                .iter()
                .filter(|&&c| c < n_nodes)
                .flat_map(|&c| tree.nodes[c].categories.iter().copied())
                .collect();
            union.sort_unstable();
            let dedup_len = {
                let mut u = union.clone();
                u.dedup();
                u.len()
            };
            if dedup_len != union.len() {
                push(format!("node {i} children overlap in categories"));
            }
            if union != node.categories {
                push(format!("node {i} categories differ from child union"));
            }
            // Fan-out beyond the branching bound is only legal for the
            // singleton expansion at the depth cap.
            if node.children.len() > tree.branching && node.depth < tree.max_depth {
                push(format!(
                    "node {i} at depth {} has fan-out {} > {}",
                    node.depth,
                    node.children.len(),
                    tree.branching
                ));
            }
            if node.children.len() < 2 {
                push(format!("node {i} has a single child"));
            }
        }
        if node.depth > tree.max_depth + 1 {
            push(format!("node {i} deeper than {}", tree.max_depth + 1));
        }
        if node.is_leaf() && node.depth > tree.max_depth + 1 {
            push(format!("leaf {i} deeper than allowed"));
        }
    }

    // Compare against 0..n_categories without materializing it: the
    // count may come from a corrupt file header.
    let root_node = &tree.nodes[tree.root];
    if root_node.categories.len() != tree.n_categories
        || !root_node.categories.iter().copied().eq(0..tree.n_categories)
    {
        push("root does not hold all categories".into());
    }
    let mut leaf_cats: Vec<usize> = tree
        .nodes
        .iter()
        .filter(|n| n.is_leaf() && !n.categories.is_empty())
        .map(|n| n.categories[0])
        .collect();
    leaf_cats.sort_unstable();
    if leaf_cats.len() != tree.n_categories || !leaf_cats.iter().copied().eq(0..tree.n_categories) {
        push("leaves do not partition the categories".into());
    }

    problems
}

/// Graphviz rendering; `names` maps dense category ids to display names
/// (defaults to the dense id).
pub fn export_dot(tree: &VisualTree, names: Option<&[String]>) -> String {
    let name_of = |c: usize| -> String {
        match names {
            Some(ns) if c < ns.len() => ns[c].clone(),
            _ => c.to_string(),
        }
    };
    let mut out = String::from("digraph category_tree {\n  node [shape=box, fontsize=10];\n");
    for node in &tree.nodes {
        let label = if node.is_leaf() {
            name_of(node.categories[0])
        } else if node.categories.len() <= 6 {
            node.categories
                .iter()
                .map(|&c| name_of(c))
                .collect::<Vec<_>>()
                .join(", ")
        } else {
            format!(
                "{} categories [{}..{}]",
                node.categories.len(),
                name_of(*node.categories.first().unwrap()),
                name_of(*node.categories.last().unwrap())
            )
        };
        let shape = if node.is_leaf() { ", style=rounded" } else { "" };
        out.push_str(&format!(
            "  n{} [label=\"{}\"{}];\n",
            node.id,
            label.replace('"', "'"),
            shape
        ));
    }
    for node in &tree.nodes {
        for &c in &node.children {
            out.push_str(&format!("  n{} -> n{};\n", node.id, c));
        }
    }
    out.push_str("}\n");
    out
}
