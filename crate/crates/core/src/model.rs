//! Trained model container and its on-disk format.
//!
//! A [`ModelContainer`] holds one or more [`TreeModel`]s over the same
//! category set (several trees only for fold-trained ensembles), the
//! dense-to-original category id map, and whether queries must be
//! L2-normalized before scoring.
//!
//! The binary layout (magic `HVTM`, version 1) is little-endian
//! throughout; floats are stored as raw IEEE-754 bits, so save/load
//! round-trips are bit-exact. Counts are validated against the
//! remaining buffer before allocating, and the tree structure is
//! re-validated after parsing, so corrupt files fail cleanly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::svm::{EdgeClassifier, TrainConfig};
use crate::tree::{validate_tree, TreeNode, VisualTree};

/// Magic bytes opening the binary model format.
pub const MODEL_MAGIC: [u8; 4] = *b"HVTM";
/// Current binary model format version.
pub const MODEL_VERSION: u8 = 1;

const NO_PARENT: u32 = u32::MAX;

/// One trained tree: structure plus one classifier per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub tree: VisualTree,
    /// `edges[node][i]` scores the edge to `tree.nodes[node].children[i]`.
    pub edges: Vec<Vec<EdgeClassifier>>,
    pub dim: usize,
    pub config: TrainConfig,
    /// Training-set row indices this tree was fit on; empty means all.
    pub fold_rows: Vec<u32>,
}

impl TreeModel {
    pub fn n_classifiers(&self) -> usize {
        self.tree.n_edges()
    }

    /// Cheap structural consistency check.
    pub fn validate(&self) -> Result<()> {
        let problems = validate_tree(&self.tree);
        if !problems.is_empty() {
            return Err(Error::InvalidParam(format!("invalid tree: {}", problems[0])));
        }
        if self.edges.len() != self.tree.nodes.len() {
            return Err(Error::InvalidParam("edge table size mismatch".into()));
        }
        for node in &self.tree.nodes {
            if self.edges[node.id].len() != node.children.len() {
                return Err(Error::InvalidParam(format!(
                    "node {} has {} children but {} classifiers",
                    node.id,
                    node.children.len(),
                    self.edges[node.id].len()
                )));
            }
            for clf in &self.edges[node.id] {
                if clf.weights.len() != self.dim {
                    return Err(Error::InvalidParam(format!(
                        "classifier at node {} has dim {}, expected {}",
                        node.id,
                        clf.weights.len(),
                        self.dim
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Everything needed to classify: trees, category id map, preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    pub dim: usize,
    /// Queries are L2-normalized before scoring when set.
    pub normalize: bool,
    /// Dense category id -> original id, strictly ascending.
    pub category_ids: Vec<u32>,
    pub trees: Vec<TreeModel>,
}

impl ModelContainer {
    pub fn n_categories(&self) -> usize {
        self.category_ids.len()
    }

    pub fn n_classifiers(&self) -> usize {
        self.trees.iter().map(TreeModel::n_classifiers).sum()
    }

    /// Dimension-checks a query row and applies the container's stored
    /// preprocessing (L2 normalization when `normalize` is set).
    pub fn prepare_query(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut v = x.to_vec();
        if self.normalize {
            let norm: f64 = v.iter().map(|&a| f64::from(a) * f64::from(a)).sum();
            let norm = norm.sqrt();
            if norm > 0.0 {
                for a in v.iter_mut() {
                    *a = (f64::from(*a) / norm) as f32;
                }
            }
        }
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::InvalidParam("container holds no trees".into()));
        }
        if !self.category_ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParam(
                "category ids must be strictly ascending".into(),
            ));
        }
        for t in &self.trees {
            t.validate()?;
            if t.dim != self.dim {
                return Err(Error::InvalidParam("tree dim differs from container".into()));
            }
            if t.tree.n_categories != self.category_ids.len() {
                return Err(Error::InvalidParam(
                    "tree categories differ from container".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MODEL_MAGIC);
        out.push(MODEL_VERSION);
        out.push(u8::from(self.normalize));
        put_u32(&mut out, self.dim as u32);
        put_u32(&mut out, self.category_ids.len() as u32);
        for &c in &self.category_ids {
            put_u32(&mut out, c);
        }
        put_u32(&mut out, self.trees.len() as u32);
        for tree in &self.trees {
            write_tree(&mut out, tree);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader {
            buf: bytes,
            pos: 0,
            origin,
        };
        let mut magic = [0u8; 4];
        for b in &mut magic {
            *b = r.u8()?;
        }
        if magic != MODEL_MAGIC {
            return Err(r.fail("bad magic, not a model file"));
        }
        let version = r.u8()?;
        if version != MODEL_VERSION {
            return Err(r.fail(format!("unsupported version {version}")));
        }
        let normalize = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(r.fail(format!("bad normalize flag {v}"))),
        };
        let dim = r.u32()? as usize;
        let n_categories = r.u32()? as usize;
        r.expect_room(n_categories, 4)?;
        let mut category_ids = Vec::with_capacity(n_categories);
        for _ in 0..n_categories {
            category_ids.push(r.u32()?);
        }
        let n_trees = r.u32()? as usize;
        if n_trees == 0 {
            return Err(r.fail("container holds no trees"));
        }
        r.expect_room(n_trees, 16)?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            trees.push(read_tree(&mut r, dim)?);
        }
        if r.pos != r.buf.len() {
            return Err(r.fail(format!("{} trailing bytes", r.buf.len() - r.pos)));
        }

        let container = Self {
            dim,
            normalize,
            category_ids,
            trees,
        };
        container
            .validate()
            .map_err(|e| Error::Format {
                path: origin.to_string(),
                message: e.to_string(),
            })?;
        Ok(container)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_tree(out: &mut Vec<u8>, model: &TreeModel) {
    put_u32(out, model.tree.branching as u32);
    put_u32(out, model.tree.max_depth as u32);
    put_u32(out, model.tree.n_categories as u32);

    put_u64(out, model.config.lambda.to_bits());
    put_u64(out, model.config.tolerance.to_bits());
    put_u32(out, model.config.epochs as u32);
    put_u32(out, model.config.root_subsample as u32);
    put_u64(out, model.config.seed);
    out.push(u8::from(model.config.use_bias));
    out.push(u8::from(model.config.balance_classes));

    put_u32(out, model.fold_rows.len() as u32);
    for &r in &model.fold_rows {
        put_u32(out, r);
    }

    put_u32(out, model.tree.nodes.len() as u32);
    put_u32(out, model.tree.root as u32);
    for node in &model.tree.nodes {
        put_u32(out, node.depth as u32);
        put_u32(out, node.parent.map_or(NO_PARENT, |p| p as u32));
        put_u32(out, node.categories.len() as u32);
        for &c in &node.categories {
            put_u32(out, c as u32);
        }
        put_u32(out, node.children.len() as u32);
        for &c in &node.children {
            put_u32(out, c as u32);
        }
    }
    for node in &model.tree.nodes {
        for clf in &model.edges[node.id] {
            for &w in &clf.weights {
                put_u32(out, w.to_bits());
            }
            put_u32(out, clf.bias.to_bits());
        }
    }
}

fn read_tree(r: &mut Reader<'_>, dim: usize) -> Result<TreeModel> {
    let branching = r.u32()? as usize;
    let max_depth = r.u32()? as usize;
    let n_categories = r.u32()? as usize;

    let lambda = f64::from_bits(r.u64()?);
    let tolerance = f64::from_bits(r.u64()?);
    let epochs = r.u32()? as usize;
    let root_subsample = r.u32()? as usize;
    let seed = r.u64()?;
    let use_bias = r.u8()? != 0;
    let balance_classes = r.u8()? != 0;

    let n_folds = r.u32()? as usize;
    r.expect_room(n_folds, 4)?;
    let mut fold_rows = Vec::with_capacity(n_folds);
    for _ in 0..n_folds {
        fold_rows.push(r.u32()?);
    }

    let n_nodes = r.u32()? as usize;
    if n_nodes == 0 {
        return Err(r.fail("tree with no nodes"));
    }
    r.expect_room(n_nodes, 12)?;
    let root = r.u32()? as usize;
    let mut nodes = Vec::with_capacity(n_nodes);
    for id in 0..n_nodes {
        let depth = r.u32()? as usize;
        let parent_raw = r.u32()?;
        let parent = if parent_raw == NO_PARENT {
            None
        } else {
            Some(parent_raw as usize)
        };
        let n_cats = r.u32()? as usize;
        r.expect_room(n_cats, 4)?;
        let mut categories = Vec::with_capacity(n_cats);
        for _ in 0..n_cats {
            categories.push(r.u32()? as usize);
        }
        let n_children = r.u32()? as usize;
        r.expect_room(n_children, 4)?;
        let mut children = Vec::with_capacity(n_children);
        for _ in 0..n_children {
            children.push(r.u32()? as usize);
        }
        nodes.push(TreeNode {
            id,
            depth,
            categories,
            children,
            parent,
        });
    }

    let mut edges = vec![Vec::new(); n_nodes];
    for id in 0..n_nodes {
        let n_children = nodes[id].children.len();
        r.expect_room(n_children, 4 * (dim + 1))?;
        let mut clfs = Vec::with_capacity(n_children);
        for _ in 0..n_children {
            let mut weights = Vec::with_capacity(dim);
            for _ in 0..dim {
                weights.push(f32::from_bits(r.u32()?));
            }
            let bias = f32::from_bits(r.u32()?);
            clfs.push(EdgeClassifier { weights, bias });
        }
        edges[id] = clfs;
    }

    Ok(TreeModel {
        tree: VisualTree {
            nodes,
            root,
            branching,
            max_depth,
            n_categories,
        },
        edges,
        dim,
        config: TrainConfig {
            lambda,
            epochs,
            tolerance,
            root_subsample,
            use_bias,
            balance_classes,
            seed,
        },
        fold_rows,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl Reader<'_> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.origin.to_string(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.fail(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    /// Refuses count fields that could not possibly fit in the rest of
    /// the buffer, so corrupt counts cannot trigger huge allocations.
    fn expect_room(&self, count: usize, elem_bytes: usize) -> Result<()> {
        let remaining = self.buf.len() - self.pos;
        if count.saturating_mul(elem_bytes) > remaining {
            return Err(self.fail(format!("count {count} exceeds remaining {remaining} bytes")));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
