//! Linear SVMs for tree edges.
//!
//! Each edge classifier solves the usual L2-regularized hinge problem
//! with Pegasos-style SGD (Shalev-Shwartz et al.): learning rate
//! `1/(lambda*t)`, shrink-then-step updates, and an averaged iterate
//! taken over the second half of the epochs, which is what gets
//! returned. The bias is learned as an extra always-one feature, so it
//! is regularized like any other weight; `use_bias: false` pins it at 0.
//!
//! [`train_tree_model`] fits one classifier per edge: positives are the
//! rows of the child's categories, negatives the rows of the sibling
//! categories under the same parent. Edges leaving the root see at most
//! `root_subsample` rows per category; deeper edges always see all rows.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::dataio::FeatureDataset;
use crate::error::{Error, Result};
use crate::model::TreeModel;
use crate::rng::{derive_rng, derive_seed};
use crate::tree::VisualTree;

/// Linear score `w . x + b` over `f32` features, accumulated in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeClassifier {
    pub weights: Vec<f32>,
    pub bias: f32,
}

impl EdgeClassifier {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, x: &[f32]) -> f64 {
        debug_assert_eq!(x.len(), self.weights.len());
        let mut s = 0.0f64;
        for (w, v) in self.weights.iter().zip(x.iter()) {
            s += f64::from(*w) * f64::from(*v);
        }
        s + f64::from(self.bias)
    }
}

/// Training hyperparameters; [`Default`] gives the standard setting.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Regularization strength; must be positive.
    pub lambda: f64,
    /// Full passes over the edge's training rows.
    pub epochs: usize,
    /// Relative objective change below which training stops early.
    pub tolerance: f64,
    /// Per-category row cap for edges leaving the root.
    pub root_subsample: usize,
    /// Learn a bias as an augmented constant feature.
    pub use_bias: bool,
    /// Weight hinge terms inversely to class frequency.
    pub balance_classes: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            epochs: 30,
            tolerance: 1e-3,
            root_subsample: 600,
            use_bias: true,
            balance_classes: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParam("lambda must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParam("epochs must be >= 1".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::InvalidParam("tolerance must be >= 0".into()));
        }
        if self.root_subsample == 0 {
            return Err(Error::InvalidParam("root_subsample must be >= 1".into()));
        }
        Ok(())
    }
}

fn class_weights(p: usize, n: usize, balance: bool) -> (f64, f64) {
    if balance {
        let m = (p + n) as f64;
        (m / (2.0 * p as f64), m / (2.0 * n as f64))
    } else {
        (1.0, 1.0)
    }
}

/// Regularized hinge objective
/// `lambda/2 |v|^2 + mean_i c_i max(0, 1 - y_i (w.x_i + b))`,
/// where `|v|^2` includes the bias exactly when `use_bias` is set (the
/// bias is an augmented feature) and `c_i` are the balance weights.
pub fn svm_objective<'a>(
    w: &[f64],
    bias: f64,
    positives: ArrayView2<'a, f32>,
    negatives: ArrayView2<'a, f32>,
    lambda: f64,
    use_bias: bool,
    balance: bool,
) -> f64 {
    let (c_pos, c_neg) = class_weights(positives.nrows(), negatives.nrows(), balance);
    let mut reg: f64 = w.iter().map(|v| v * v).sum();
    if use_bias {
        reg += bias * bias;
    }
    let mut loss = 0.0f64;
    for (rows, y, c) in [(positives, 1.0, c_pos), (negatives, -1.0, c_neg)] {
        for row in rows.rows() {
            let mut s = bias;
            for (wj, xj) in w.iter().zip(row.iter()) {
                s += wj * f64::from(*xj);
            }
            loss += c * (1.0 - y * s).max(0.0);
        }
    }
    let m = (positives.nrows() + negatives.nrows()) as f64;
    0.5 * lambda * reg + loss / m
}

fn check_rows(rows: ArrayView2<'_, f32>, side: &str) -> Result<()> {
    if rows.nrows() == 0 {
        return Err(Error::Train(format!("no {side} samples")));
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::Train(format!("non-finite value in {side} samples")));
    }
    Ok(())
}

/// Trains one binary classifier on explicit positive and negative rows.
/// Deterministic in (`positives`, `negatives`, `cfg`).
pub fn train_linear_svm<'a>(
    positives: ArrayView2<'a, f32>,
    negatives: ArrayView2<'a, f32>,
    cfg: &TrainConfig,
) -> Result<EdgeClassifier> {
    cfg.validate()?;
    check_rows(positives, "positive")?;
    check_rows(negatives, "negative")?;
    if positives.ncols() != negatives.ncols() {
        return Err(Error::DimensionMismatch {
            expected: positives.ncols(),
            got: negatives.ncols(),
        });
    }

    let d = positives.ncols();
    let dim = d + usize::from(cfg.use_bias);
    let p = positives.nrows();
    let m = p + negatives.nrows();
    let (c_pos, c_neg) = class_weights(p, negatives.nrows(), cfg.balance_classes);

    let mut w = vec![0.0f64; dim];
    let mut w_sum = vec![0.0f64; dim];
    let mut n_avg: u64 = 0;
    let avg_from = cfg.epochs / 2;
    let mut t: u64 = 0;
    let mut rng = derive_rng(cfg.seed, "svm-epoch", &[]);
    let mut order: Vec<usize> = (0..m).collect();
    let mut prev_obj = f64::INFINITY;

    let result = |w_sum: &[f64], n_avg: u64, w: &[f64]| -> (Vec<f64>, f64) {
        let v: Vec<f64> = if n_avg > 0 {
            w_sum.iter().map(|s| s / n_avg as f64).collect()
        } else {
            w.to_vec()
        };
        let bias = if cfg.use_bias { v[d] } else { 0.0 };
        (v[..d].to_vec(), bias)
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            t += 1;
            let (row, y, c) = if idx < p {
                (positives.row(idx), 1.0, c_pos)
            } else {
                (negatives.row(idx - p), -1.0, c_neg)
            };
            let mut s = 0.0f64;
            for j in 0..d {
                s += w[j] * f64::from(row[j]);
            }
            if cfg.use_bias {
                s += w[d];
            }
            let margin = y * s;

            let eta = 1.0 / (cfg.lambda * t as f64);
            let shrink = 1.0 - eta * cfg.lambda;
            for v in w.iter_mut() {
                *v *= shrink;
            }
            if margin < 1.0 {
                let step = eta * c * y;
                for j in 0..d {
                    w[j] += step * f64::from(row[j]);
                }
                if cfg.use_bias {
                    w[d] += step;
                }
            }
            if epoch >= avg_from {
                for (s, v) in w_sum.iter_mut().zip(w.iter()) {
                    *s += v;
                }
                n_avg += 1;
            }
        }

        let (cand_w, cand_b) = result(&w_sum, n_avg, &w);
        let obj = svm_objective(
            &cand_w,
            cand_b,
            positives,
            negatives,
            cfg.lambda,
            cfg.use_bias,
            cfg.balance_classes,
        );
        // Scale by the current value: prev starts at infinity, which
        // must not satisfy the test on the first epoch.
        if (prev_obj - obj).abs() <= cfg.tolerance * obj.abs().max(1.0) {
            break;
        }
        prev_obj = obj;
    }
    let _ = prev_obj;

    let (final_w, final_b) = result(&w_sum, n_avg, &w);
    Ok(EdgeClassifier {
        weights: final_w.iter().map(|&v| v as f32).collect(),
        bias: final_b as f32,
    })
}

/// Row indices per category for edges leaving the root: categories
/// larger than the cap are subsampled to `root_subsample` rows.
pub(crate) fn root_layer_rows(ds: &FeatureDataset, cap: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..ds.n_categories())
        .map(|cat| {
            let rows = ds.rows_of(cat);
            if rows.len() <= cap {
                rows.to_vec()
            } else {
                let mut idx = rows.to_vec();
                let mut rng = derive_rng(seed, "root-subsample", &[cat as u64]);
                idx.shuffle(&mut rng);
                idx.truncate(cap);
                idx.sort_unstable();
                idx
            }
        })
        .collect()
}

fn gather(ds: &FeatureDataset, rows: &[usize]) -> Array2<f32> {
    ds.features().select(Axis(0), rows)
}

/// Fits every edge classifier of `tree` on `ds`. Positives for an edge
/// are the child's category rows, negatives the sibling categories'
/// rows; each edge trains with a seed derived from (`cfg.seed`, node,
/// child position), so the result is independent of evaluation order.
pub fn train_tree_model(tree: &VisualTree, ds: &FeatureDataset, cfg: &TrainConfig) -> Result<TreeModel> {
    cfg.validate()?;
    if tree.n_categories != ds.n_categories() {
        return Err(Error::Train(format!(
            "tree has {} categories, dataset has {}",
            tree.n_categories,
            ds.n_categories()
        )));
    }

    let root_rows = root_layer_rows(ds, cfg.root_subsample, cfg.seed);
    let mut edges: Vec<Vec<EdgeClassifier>> = vec![Vec::new(); tree.nodes.len()];

    for node in &tree.nodes {
        if node.is_leaf() {
            continue;
        }
        let at_root = node.id == tree.root;
        let rows_of = |cat: usize| -> &[usize] {
            if at_root {
                &root_rows[cat]
            } else {
                ds.rows_of(cat)
            }
        };

        let mut trained = Vec::with_capacity(node.children.len());
        for (ci, &child) in node.children.iter().enumerate() {
            let mut pos_rows: Vec<usize> = Vec::new();
            for &cat in &tree.nodes[child].categories {
                pos_rows.extend_from_slice(rows_of(cat));
            }
            let mut neg_rows: Vec<usize> = Vec::new();
            for &sib in &node.children {
                if sib == child {
                    continue;
                }
                for &cat in &tree.nodes[sib].categories {
                    neg_rows.extend_from_slice(rows_of(cat));
                }
            }
            if pos_rows.is_empty() || neg_rows.is_empty() {
                return Err(Error::Train(format!(
                    "node {} child {} has an empty training side",
                    node.id, ci
                )));
            }
            let edge_cfg = TrainConfig {
                seed: derive_seed(cfg.seed, "edge", &[node.id as u64, ci as u64]),
                ..cfg.clone()
            };
            trained.push(train_linear_svm(
                gather(ds, &pos_rows).view(),
                gather(ds, &neg_rows).view(),
                &edge_cfg,
            )?);
        }
        edges[node.id] = trained;
    }

    Ok(TreeModel {
        tree: tree.clone(),
        edges,
        dim: ds.dim(),
        config: cfg.clone(),
        fold_rows: Vec::new(),
    })
}

/// Full training setup: tree shape, affinity tuning, ensemble size.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Branching bound `K`.
    pub branching: usize,
    /// Depth cap `L`.
    pub depth: usize,
    /// Trees in the model; above 1, each tree trains on its own
    /// stratified fold of the data.
    pub n_trees: usize,
    /// Neighbor rank for the affinity bandwidths.
    pub tuning_k: usize,
    /// L2-normalize rows before training (recorded in the model).
    pub normalize: bool,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            branching: 32,
            depth: 2,
            n_trees: 1,
            tuning_k: 7,
            normalize: false,
            train: TrainConfig::default(),
        }
    }
}

fn means_matrix(stats: &[crate::dataio::CategoryStats], dim: usize) -> Array2<f64> {
    let mut means = Array2::<f64>::zeros((stats.len(), dim));
    for (i, s) in stats.iter().enumerate() {
        means.row_mut(i).assign(&s.mean);
    }
    means
}

fn fit_one_tree(
    ds: &FeatureDataset,
    cfg: &PipelineConfig,
    seed: u64,
    fold_rows: Vec<u32>,
) -> Result<TreeModel> {
    let stats = crate::dataio::compute_stats(ds);
    let tree = if ds.n_categories() == 1 {
        let unit = crate::metric::AffinityMatrix {
            values: Array2::ones((1, 1)),
            bandwidths: Array2::ones((1, 1)),
            distances: Array2::zeros((1, 1)),
        };
        crate::tree::build_tree(&unit, cfg.branching, cfg.depth, seed)?
    } else {
        let affinity = crate::metric::build_affinity(&stats, cfg.tuning_k)?;
        let means = means_matrix(&stats, ds.dim());
        crate::tree::build_tree_with_means(&affinity, &means, cfg.branching, cfg.depth, seed)?
    };
    let edge_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let mut model = train_tree_model(&tree, ds, &edge_cfg)?;
    model.fold_rows = fold_rows;
    Ok(model)
}

/// Trains a complete model: affinity and tree from the data's category
/// statistics, then one classifier per edge. With `n_trees > 1` the
/// rows are divided into that many stratified folds and each tree is
/// built and trained on its own fold (recorded in
/// [`TreeModel::fold_rows`]). Deterministic in (`ds`, `cfg`).
pub fn train_pipeline(ds: &FeatureDataset, cfg: &PipelineConfig) -> Result<crate::model::ModelContainer> {
    if cfg.branching < 2 {
        return Err(Error::InvalidParam("branching must be >= 2".into()));
    }
    if cfg.depth < 1 {
        return Err(Error::InvalidParam("depth must be >= 1".into()));
    }
    if cfg.n_trees == 0 {
        return Err(Error::InvalidParam("n_trees must be >= 1".into()));
    }
    if cfg.tuning_k == 0 {
        return Err(Error::InvalidParam("tuning_k must be >= 1".into()));
    }
    cfg.train.validate()?;

    let work = if cfg.normalize {
        ds.l2_normalized()
    } else {
        ds.clone()
    };

    let mut trees = Vec::with_capacity(cfg.n_trees);
    if cfg.n_trees == 1 {
        trees.push(fit_one_tree(&work, cfg, cfg.train.seed, Vec::new())?);
    } else {
        let folds = crate::dataio::stratified_folds(&work, cfg.n_trees, cfg.train.seed)?;
        for (f, fold) in folds.iter().enumerate() {
            let mut rows = fold.clone();
            rows.sort_unstable();
            let sub = work.subset(&rows)?;
            // A lost category would shift the fold's dense ids away
            // from the container's and corrupt ensemble averaging.
            if sub.n_categories() != work.n_categories() {
                return Err(Error::Train(format!(
                    "fold {f} is missing categories; every category needs \
                     at least n_trees ({}) rows",
                    cfg.n_trees
                )));
            }
            let seed = derive_seed(cfg.train.seed, "tree", &[f as u64]);
            let fold_rows = rows.iter().map(|&r| r as u32).collect();
            trees.push(fit_one_tree(&sub, cfg, seed, fold_rows)?);
        }
    }

    let container = crate::model::ModelContainer {
        dim: ds.dim(),
        normalize: cfg.normalize,
        category_ids: ds.original_ids().to_vec(),
        trees,
    };
    container.validate()?;
    Ok(container)
}
