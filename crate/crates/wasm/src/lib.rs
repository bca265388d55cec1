//! Browser bindings for an interactive tour of the classifier: draw a
//! 2-D synthetic dataset, train a category tree on it, then classify
//! arbitrary points and compare the greedy and beam descents.
//!
//! Everything crosses the JS boundary as JSON strings so the page
//! needs no generated type glue beyond the wasm-bindgen shims. The
//! heavy lifting stays in the `vistree` crate; this one only shapes
//! its inputs and outputs.

use serde_json::{json, Value};
use vistree::dataio::generate_synthetic;
use vistree::infer::{predict_greedy, predict_nbest};
use vistree::svm::{train_pipeline, PipelineConfig};
use vistree::tree::VisualTree;
use vistree::{Error, FeatureDataset, ModelContainer, SynthConfig, TrainConfig};

type VtResult<T> = vistree::Result<T>;
use wasm_bindgen::prelude::*;

/// Demo session state, kept separate from the wasm-bindgen wrapper so
/// native tests can drive it without a JS runtime.
#[derive(Default)]
struct State {
    dataset: Option<FeatureDataset>,
    container: Option<ModelContainer>,
}

impl State {
    /// Synthesizes a 2-D dataset of `categories` Gaussian clusters
    /// planted in `groups` coarse groups and returns the points.
    fn generate(
        &mut self,
        categories: usize,
        per_class: usize,
        groups: usize,
        noise: f64,
        seed: u64,
    ) -> VtResult<String> {
        let ds = generate_synthetic(&SynthConfig {
            n_categories: categories,
            samples_per_category: per_class,
            dim: 2,
            hierarchy_branching: groups.max(1),
            noise_scale: noise,
            seed,
        })?;
        let points: Vec<Value> = (0..ds.n_samples())
            .map(|i| {
                let row = ds.row(i);
                json!({
                    "x": row[0],
                    "y": row[1],
                    "c": ds.original_id(ds.label(i) as usize),
                })
            })
            .collect();
        let out = json!({
            "n_categories": ds.n_categories(),
            "points": points,
        });
        // A new dataset invalidates any model trained on the old one.
        self.dataset = Some(ds);
        self.container = None;
        Ok(out.to_string())
    }

    /// Trains a tree model on the generated dataset and returns the
    /// tree as nested nodes for rendering.
    fn train(&mut self, branching: usize, depth: usize, epochs: usize, seed: u64) -> VtResult<String> {
        let ds = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::InvalidParam("generate a dataset first".into()))?;
        let cfg = PipelineConfig {
            branching,
            depth,
            train: TrainConfig {
                epochs,
                seed,
                ..TrainConfig::default()
            },
            ..PipelineConfig::default()
        };
        let container = train_pipeline(ds, &cfg)?;
        let tree = &container.trees[0].tree;
        let out = json!({
            "root": tree_node_json(tree, tree.root, &container.category_ids),
            "n_leaves": tree.n_leaves(),
            "n_classifiers": container.n_classifiers(),
        });
        self.container = Some(container);
        Ok(out.to_string())
    }

    /// Classifies one point with both descents. Also reports the
    /// root-to-leaf node path of each winner so the page can highlight
    /// it in the rendered tree.
    fn classify(&self, x: f64, y: f64, beam_width: usize) -> VtResult<String> {
        let container = self
            .container
            .as_ref()
            .ok_or_else(|| Error::InvalidParam("train a model first".into()))?;
        let q = container.prepare_query(&[x as f32, y as f32])?;
        let model = &container.trees[0];
        let greedy = predict_greedy(model, &q)?;
        let beam = predict_nbest(model, &q, beam_width.max(1))?;
        let ranked: Vec<Value> = beam
            .ranked
            .iter()
            .take(5)
            .map(|&(c, p)| json!([container.category_ids[c], p]))
            .collect();
        let report = |pred_cat: usize, prob: f64, evals: usize| {
            json!({
                "label": container.category_ids[pred_cat],
                "prob": prob,
                "evals": evals,
                "path": leaf_path(&model.tree, pred_cat),
            })
        };
        let out = json!({
            "greedy": report(greedy.top(), greedy.ranked[0].1, greedy.classifier_evals),
            "beam": report(beam.top(), beam.ranked[0].1, beam.classifier_evals),
            "ranked": ranked,
        });
        Ok(out.to_string())
    }
}

fn tree_node_json(tree: &VisualTree, id: usize, ids: &[u32]) -> Value {
    let node = tree.node(id);
    let cats: Vec<u32> = node.categories.iter().map(|&c| ids[c]).collect();
    let children: Vec<Value> = node
        .children
        .iter()
        .map(|&c| tree_node_json(tree, c, ids))
        .collect();
    json!({ "id": node.id, "cats": cats, "children": children })
}

/// Node ids from the root to the unique leaf holding `cat`.
fn leaf_path(tree: &VisualTree, cat: usize) -> Vec<usize> {
    let mut path = vec![tree.root];
    let mut node = tree.node(tree.root);
    while !node.is_leaf() {
        let next = node
            .children
            .iter()
            .copied()
            .find(|&c| tree.node(c).categories.contains(&cat))
            .expect("every category reaches a leaf");
        path.push(next);
        node = tree.node(next);
    }
    path
}

#[wasm_bindgen]
pub struct Demo {
    state: State,
}

fn to_js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    #[allow(clippy::new_without_default)]
    pub fn new() -> Demo {
        Demo {
            state: State::default(),
        }
    }

    pub fn generate(
        &mut self,
        categories: usize,
        per_class: usize,
        groups: usize,
        noise: f64,
        seed: u64,
    ) -> Result<String, JsError> {
        self.state
            .generate(categories, per_class, groups, noise, seed)
            .map_err(to_js)
    }

    pub fn train(
        &mut self,
        branching: usize,
        depth: usize,
        epochs: usize,
        seed: u64,
    ) -> Result<String, JsError> {
        self.state.train(branching, depth, epochs, seed).map_err(to_js)
    }

    pub fn classify(&self, x: f64, y: f64, beam_width: usize) -> Result<String, JsError> {
        self.state.classify(x, y, beam_width).map_err(to_js)
    }
}
