//! Tree descent: greedy, exhaustive, and N-best beam inference.
//!
//! Every root-to-leaf path has a joint probability: the product over
//! its edges of the sigmoid of the edge classifier's score (the root
//! contributes probability 1). All descent strategies accumulate the
//! product in log space, adding terms in root-to-leaf order, so a beam
//! wide enough to cover every leaf reproduces exhaustive scoring bit
//! for bit.
//!
//! The beam is layer-synchronous: each round extends every unfinished
//! hypothesis by all children of its frontier node, keeps finished
//! hypotheses as competitors at their frozen score, and prunes back to
//! the `q` best. Path scores are never renormalized across siblings.
//! Ties are broken toward the smaller category id everywhere, which
//! makes a width-1 beam reproduce greedy descent exactly.

use crate::error::{Error, Result};
use crate::model::{ModelContainer, TreeModel};

/// Logistic function, numerically stable over the full `f64` range.
pub fn edge_probability(score: f64) -> f64 {
    if score >= 0.0 {
        1.0 / (1.0 + (-score).exp())
    } else {
        let e = score.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(score))` without overflow for large negative scores.
fn ln_edge_probability(score: f64) -> f64 {
    if score >= 0.0 {
        -(-score).exp().ln_1p()
    } else {
        score - score.exp().ln_1p()
    }
}

/// Ranked categories with evaluation counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `(dense category id, path probability)`, probability
    /// non-increasing; equal probabilities ordered by ascending id.
    pub ranked: Vec<(usize, f64)>,
    /// Edge classifier scores computed.
    pub classifier_evals: usize,
    /// Path probability extensions (log-space additions).
    pub multiplications: usize,
}

impl Prediction {
    /// Top-ranked dense category id.
    pub fn top(&self) -> usize {
        self.ranked[0].0
    }

    /// Dense ids of the `k` best categories.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        self.ranked.iter().take(k).map(|&(c, _)| c).collect()
    }
}

/// A partial or complete root-to-leaf path.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// Node ids from the root to the frontier, inclusive.
    pub nodes: Vec<usize>,
    pub log_prob: f64,
    /// The frontier node is a leaf.
    pub complete: bool,
}

impl Hypothesis {
    fn frontier(&self) -> usize {
        *self.nodes.last().unwrap()
    }
}

fn check_query(model: &TreeModel, x: &[f32]) -> Result<()> {
    if x.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("non-finite query feature".into()));
    }
    Ok(())
}

/// Follows the highest-probability edge at each node; ties go to the
/// lower child index. Returns a single-entry ranking.
///
/// Candidates are compared by accumulated path log-probability, not by
/// the local edge term alone: near saturation the accumulation can
/// round distinct edge terms to the same total, and a width-1 beam
/// resolves such ties by category id. Comparing the same sums keeps
/// the two procedures identical bit for bit.
pub fn predict_greedy(model: &TreeModel, x: &[f32]) -> Result<Prediction> {
    check_query(model, x)?;
    let tree = &model.tree;
    let mut node = tree.root;
    let mut log_prob = 0.0f64;
    let mut evals = 0usize;
    let mut mults = 0usize;

    while !tree.nodes[node].is_leaf() {
        let mut best_idx = 0usize;
        let mut best_total = f64::NEG_INFINITY;
        for (ci, clf) in model.edges[node].iter().enumerate() {
            let total = log_prob + ln_edge_probability(clf.score(x));
            evals += 1;
            if ci == 0 || total.total_cmp(&best_total).is_gt() {
                best_total = total;
                best_idx = ci;
            }
        }
        log_prob = best_total;
        mults += 1;
        node = tree.nodes[node].children[best_idx];
    }

    Ok(Prediction {
        ranked: vec![(tree.leaf_category(node), log_prob.exp())],
        classifier_evals: evals,
        multiplications: mults,
    })
}

/// Scores every root-to-leaf path and ranks all categories.
pub fn predict_exhaustive(model: &TreeModel, x: &[f32]) -> Result<Prediction> {
    check_query(model, x)?;
    let tree = &model.tree;
    let mut evals = 0usize;
    let mut mults = 0usize;
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(tree.n_categories);

    let mut stack: Vec<(usize, f64)> = vec![(tree.root, 0.0)];
    while let Some((node, lp)) = stack.pop() {
        if tree.nodes[node].is_leaf() {
            out.push((tree.leaf_category(node), lp));
            continue;
        }
        let children = &tree.nodes[node].children;
        let lps: Vec<f64> = model.edges[node]
            .iter()
            .map(|clf| {
                evals += 1;
                ln_edge_probability(clf.score(x))
            })
            .collect();
        for ci in (0..children.len()).rev() {
            mults += 1;
            stack.push((children[ci], lp + lps[ci]));
        }
    }

    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(Prediction {
        ranked: out.into_iter().map(|(c, lp)| (c, lp.exp())).collect(),
        classifier_evals: evals,
        multiplications: mults,
    })
}

/// Layer-synchronous beam of width `q`; see the module docs. Returns up
/// to `q` ranked categories.
pub fn predict_nbest(model: &TreeModel, x: &[f32], q: usize) -> Result<Prediction> {
    let (beam, evals, mults) = beam_search(model, x, q)?;
    Ok(Prediction {
        ranked: beam
            .into_iter()
            .map(|h| (model.tree.leaf_category(h.frontier()), h.log_prob.exp()))
            .collect(),
        classifier_evals: evals,
        multiplications: mults,
    })
}

/// [`predict_nbest`] exposing the surviving paths themselves.
pub fn beam_search(model: &TreeModel, x: &[f32], q: usize) -> Result<(Vec<Hypothesis>, usize, usize)> {
    check_query(model, x)?;
    if q == 0 {
        return Err(Error::InvalidParam("beam width must be >= 1".into()));
    }
    let tree = &model.tree;
    let mut evals = 0usize;
    let mut mults = 0usize;

    let mut beam = vec![Hypothesis {
        nodes: vec![tree.root],
        log_prob: 0.0,
        complete: tree.nodes[tree.root].is_leaf(),
    }];

    while beam.iter().any(|h| !h.complete) {
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for h in &beam {
            if h.complete {
                candidates.push(h.clone());
                continue;
            }
            let node = h.frontier();
            for (ci, clf) in model.edges[node].iter().enumerate() {
                let lp = ln_edge_probability(clf.score(x));
                evals += 1;
                mults += 1;
                let child = tree.nodes[node].children[ci];
                let mut nodes = h.nodes.clone();
                nodes.push(child);
                candidates.push(Hypothesis {
                    nodes,
                    log_prob: h.log_prob + lp,
                    complete: tree.nodes[child].is_leaf(),
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.log_prob.total_cmp(&a.log_prob).then_with(|| {
                let ca = tree.nodes[a.frontier()].categories[0];
                let cb = tree.nodes[b.frontier()].categories[0];
                ca.cmp(&cb)
            })
        });
        candidates.truncate(q);
        beam = candidates;
    }

    Ok((beam, evals, mults))
}

/// Averages per-category path probabilities over all trees of the
/// container (a category absent from a tree's beam contributes 0 for
/// that tree) and ranks by the average. Counters are summed. The query
/// is passed through the container's stored preprocessing first.
pub fn predict_ensemble(container: &ModelContainer, x: &[f32], q: usize) -> Result<Prediction> {
    if container.trees.is_empty() {
        return Err(Error::InvalidParam("container holds no trees".into()));
    }
    let x = container.prepare_query(x)?;
    let n = container.n_categories();
    let mut sums = vec![0.0f64; n];
    let mut evals = 0usize;
    let mut mults = 0usize;
    for tree in &container.trees {
        let pred = predict_nbest(tree, &x, q)?;
        evals += pred.classifier_evals;
        mults += pred.multiplications;
        for (cat, p) in pred.ranked {
            sums[cat] += p;
        }
    }
    let inv = 1.0 / container.trees.len() as f64;
    let mut ranked: Vec<(usize, f64)> = sums
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0.0)
        .map(|(c, &s)| (c, s * inv))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(Prediction {
        ranked,
        classifier_evals: evals,
        multiplications: mults,
    })
}
