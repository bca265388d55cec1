//! Accuracy measurement and benchmark sweeps.
//!
//! [`run_benchmark`] repeats, per sweep configuration: a seeded
//! per-category train/test split, full pipeline training, then top-1
//! and top-5 accuracy for greedy, beam, exhaustive (skipped past 4096
//! leaves), ensemble (multi-tree rows), and optionally a flat
//! one-vs-rest baseline trained on the identical split. Per-query
//! classifier evaluation counts are averaged; wall-clock timing is
//! reported as the median beam query in microseconds and kept out of
//! the accuracy fields so reports stay comparable across machines
//! ([`EvalReport::strip_timing`] zeroes it for byte-level comparisons).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::{split_per_class, FeatureDataset};
use crate::error::{Error, Result};
use crate::infer::{edge_probability, predict_ensemble, predict_exhaustive, predict_greedy, predict_nbest, Prediction};
use crate::rng::derive_seed;
use crate::svm::{train_linear_svm, train_pipeline, EdgeClassifier, PipelineConfig, TrainConfig};

/// Fraction of rows whose truth appears among the first `k` ranked
/// predictions. Rows with fewer than `k` predictions are judged on what
/// they contain.
pub fn topk_accuracy(predictions: &[Vec<usize>], truths: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    if predictions.len() != truths.len() {
        return Err(Error::InvalidParam(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::InvalidParam("no rows to score".into()));
    }
    let hits = predictions
        .iter()
        .zip(truths.iter())
        .filter(|(p, t)| p.iter().take(k).any(|c| c == *t))
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

/// One-vs-rest linear baseline: a classifier per category.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatModel {
    pub classifiers: Vec<EdgeClassifier>,
    pub dim: usize,
}

/// Trains one classifier per category (positives: the category's rows,
/// negatives: everything else) with per-category derived seeds.
pub fn train_flat_baseline(ds: &FeatureDataset, cfg: &TrainConfig) -> Result<FlatModel> {
    cfg.validate()?;
    if ds.n_categories() < 2 {
        return Err(Error::Train("flat baseline needs >= 2 categories".into()));
    }
    let mut classifiers = Vec::with_capacity(ds.n_categories());
    for cat in 0..ds.n_categories() {
        let pos = ds.category_matrix(cat);
        let neg_rows: Vec<usize> = (0..ds.n_samples())
            .filter(|&r| ds.label(r) as usize != cat)
            .collect();
        let neg = ds.features().select(ndarray::Axis(0), &neg_rows);
        let cat_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, "flat", &[cat as u64]),
            ..cfg.clone()
        };
        classifiers.push(train_linear_svm(pos.view(), neg.view(), &cat_cfg)?);
    }
    Ok(FlatModel {
        classifiers,
        dim: ds.dim(),
    })
}

/// Scores every category classifier; ranks by sigmoid score, ascending
/// id on ties. Always costs one evaluation per category.
pub fn predict_flat(model: &FlatModel, x: &[f32]) -> Result<Prediction> {
    if x.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: x.len(),
        });
    }
    let mut ranked: Vec<(usize, f64)> = model
        .classifiers
        .iter()
        .enumerate()
        .map(|(c, clf)| (c, edge_probability(clf.score(x))))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(Prediction {
        classifier_evals: model.classifiers.len(),
        multiplications: 0,
        ranked,
    })
}

/// One tree-shape/beam-width combination to measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub branching: usize,
    pub depth: usize,
    pub beam: usize,
    pub n_trees: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sweep: Vec<SweepEntry>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Seeded repetitions averaged into each row.
    pub repeats: usize,
    pub tuning_k: usize,
    pub include_flat: bool,
    pub include_exhaustive: bool,
    pub train: TrainConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sweep: vec![SweepEntry {
                branching: 32,
                depth: 2,
                beam: 5,
                n_trees: 1,
            }],
            train_per_class: 50,
            test_per_class: 10,
            repeats: 3,
            tuning_k: 7,
            include_flat: false,
            include_exhaustive: true,
            train: TrainConfig::default(),
        }
    }
}

/// Averages for one sweep entry. Accuracy fields are fractions in
/// [0, 1]; eval fields are per-query classifier evaluations. Tree
/// accuracies are averaged over a row's trees, then over repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub branching: usize,
    pub depth: usize,
    pub beam: usize,
    pub n_trees: usize,
    pub repeats: usize,
    pub n_categories: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub n_classifiers: f64,
    pub greedy_top1: f64,
    pub greedy_top5: f64,
    pub beam_top1: f64,
    pub beam_top5: f64,
    pub exhaustive_top1: Option<f64>,
    pub exhaustive_top5: Option<f64>,
    pub ensemble_top1: Option<f64>,
    pub ensemble_top5: Option<f64>,
    pub flat_top1: Option<f64>,
    pub flat_top5: Option<f64>,
    pub mean_evals_greedy: f64,
    pub mean_evals_beam: f64,
    pub mean_evals_exhaustive: Option<f64>,
    pub flat_evals: Option<f64>,
    pub median_query_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<BenchRow>,
}

impl EvalReport {
    /// One JSON object per row, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("report row serializes"));
            out.push('\n');
        }
        out
    }

    /// Zeroes wall-clock fields so two reports from identical inputs
    /// compare byte-identical regardless of machine speed.
    pub fn strip_timing(&mut self) {
        for row in &mut self.rows {
            row.median_query_us = 0.0;
        }
    }

    /// Fixed-width human-readable table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "   K   L   Q  trees  greedy@1    beam@1    beam@5     ens@1    flat@1  evals/q      us/q\n",
        );
        let opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:10.4}"),
            None => format!("{:>10}", "-"),
        };
        for r in &self.rows {
            out.push_str(&format!(
                "{:4} {:3} {:3} {:6} {:9.4} {:9.4} {:9.4} {} {} {:8.1} {:9.1}\n",
                r.branching,
                r.depth,
                r.beam,
                r.n_trees,
                r.greedy_top1,
                r.beam_top1,
                r.beam_top5,
                opt(r.ensemble_top1),
                opt(r.flat_top1),
                r.mean_evals_beam,
                r.median_query_us,
            ));
        }
        out
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct TreeEval {
    top1: f64,
    top5: f64,
    mean_evals: f64,
}

fn eval_tree<F>(test: &FeatureDataset, truths: &[usize], mut predict: F) -> Result<TreeEval>
where
    F: FnMut(&[f32]) -> Result<Prediction>,
{
    let mut preds = Vec::with_capacity(test.n_samples());
    let mut evals = 0usize;
    for i in 0..test.n_samples() {
        let x = test.row(i).to_vec();
        let p = predict(&x)?;
        evals += p.classifier_evals;
        preds.push(p.top_k(5));
    }
    Ok(TreeEval {
        top1: topk_accuracy(&preds, truths, 1)?,
        top5: topk_accuracy(&preds, truths, 5)?,
        mean_evals: evals as f64 / test.n_samples() as f64,
    })
}

/// Runs the full sweep; one averaged row per entry. Deterministic apart
/// from `median_query_us`.
pub fn run_benchmark(ds: &FeatureDataset, cfg: &BenchConfig) -> Result<EvalReport> {
    if cfg.sweep.is_empty() {
        return Err(Error::InvalidParam("empty sweep".into()));
    }
    if cfg.repeats == 0 {
        return Err(Error::InvalidParam("repeats must be >= 1".into()));
    }
    if cfg.test_per_class == 0 {
        return Err(Error::InvalidParam("test_per_class must be >= 1".into()));
    }

    let mut rows = Vec::with_capacity(cfg.sweep.len());
    for entry in &cfg.sweep {
        let mut greedy1 = Vec::new();
        let mut greedy5 = Vec::new();
        let mut beam1 = Vec::new();
        let mut beam5 = Vec::new();
        let mut exh1 = Vec::new();
        let mut exh5 = Vec::new();
        let mut ens1 = Vec::new();
        let mut ens5 = Vec::new();
        let mut flat1 = Vec::new();
        let mut flat5 = Vec::new();
        let mut evals_greedy = Vec::new();
        let mut evals_beam = Vec::new();
        let mut evals_exh = Vec::new();
        let mut evals_flat = Vec::new();
        let mut classifiers = Vec::new();
        let mut times_us: Vec<f64> = Vec::new();

        for rep in 0..cfg.repeats {
            let split_seed = derive_seed(cfg.train.seed, "bench-split", &[rep as u64]);
            let (train, test) =
                split_per_class(ds, cfg.train_per_class, cfg.test_per_class, split_seed)?;
            let truths: Vec<usize> = test.labels().iter().map(|&l| l as usize).collect();

            let pcfg = PipelineConfig {
                branching: entry.branching,
                depth: entry.depth,
                n_trees: entry.n_trees,
                tuning_k: cfg.tuning_k,
                normalize: false,
                train: TrainConfig {
                    seed: derive_seed(cfg.train.seed, "bench-train", &[rep as u64]),
                    ..cfg.train.clone()
                },
            };
            let container = train_pipeline(&train, &pcfg)?;
            classifiers.push(container.n_classifiers() as f64);

            let do_exh = cfg.include_exhaustive
                && container.trees.iter().all(|t| t.tree.n_leaves() <= 4096);

            for tree in &container.trees {
                let g = eval_tree(&test, &truths, |x| predict_greedy(tree, x))?;
                greedy1.push(g.top1);
                greedy5.push(g.top5);
                evals_greedy.push(g.mean_evals);

                let mut preds = Vec::with_capacity(test.n_samples());
                let mut ev = 0usize;
                for i in 0..test.n_samples() {
                    let x = test.row(i).to_vec();
                    let t0 = Instant::now();
                    let p = predict_nbest(tree, &x, entry.beam)?;
                    times_us.push(t0.elapsed().as_secs_f64() * 1e6);
                    ev += p.classifier_evals;
                    preds.push(p.top_k(5));
                }
                beam1.push(topk_accuracy(&preds, &truths, 1)?);
                beam5.push(topk_accuracy(&preds, &truths, 5)?);
                evals_beam.push(ev as f64 / test.n_samples() as f64);

                if do_exh {
                    let e = eval_tree(&test, &truths, |x| predict_exhaustive(tree, x))?;
                    exh1.push(e.top1);
                    exh5.push(e.top5);
                    evals_exh.push(e.mean_evals);
                }
            }

            if entry.n_trees > 1 {
                let e = eval_tree(&test, &truths, |x| {
                    predict_ensemble(&container, x, entry.beam)
                })?;
                ens1.push(e.top1);
                ens5.push(e.top5);
            }

            if cfg.include_flat {
                let flat_cfg = TrainConfig {
                    seed: derive_seed(cfg.train.seed, "bench-flat", &[rep as u64]),
                    ..cfg.train.clone()
                };
                let flat = train_flat_baseline(&train, &flat_cfg)?;
                let e = eval_tree(&test, &truths, |x| predict_flat(&flat, x))?;
                flat1.push(e.top1);
                flat5.push(e.top5);
                evals_flat.push(e.mean_evals);
            }
        }

        let maybe = |v: &Vec<f64>| if v.is_empty() { None } else { Some(mean(v)) };
        rows.push(BenchRow {
            branching: entry.branching,
            depth: entry.depth,
            beam: entry.beam,
            n_trees: entry.n_trees,
            repeats: cfg.repeats,
            n_categories: ds.n_categories(),
            dim: ds.dim(),
            train_per_class: cfg.train_per_class,
            test_per_class: cfg.test_per_class,
            n_classifiers: mean(&classifiers),
            greedy_top1: mean(&greedy1),
            greedy_top5: mean(&greedy5),
            beam_top1: mean(&beam1),
            beam_top5: mean(&beam5),
            exhaustive_top1: maybe(&exh1),
            exhaustive_top5: maybe(&exh5),
            ensemble_top1: maybe(&ens1),
            ensemble_top5: maybe(&ens5),
            flat_top1: maybe(&flat1),
            flat_top5: maybe(&flat5),
            mean_evals_greedy: mean(&evals_greedy),
            mean_evals_beam: mean(&evals_beam),
            mean_evals_exhaustive: maybe(&evals_exh),
            flat_evals: maybe(&evals_flat),
            median_query_us: median(&mut times_us),
        });
    }
    Ok(EvalReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SynthConfig};

    #[test]
    fn topk_counts_hits() {
        let preds = vec![vec![0, 2], vec![1, 0], vec![2, 1]];
        let truths = vec![0usize, 0, 1];
        assert_eq!(topk_accuracy(&preds, &truths, 1).unwrap(), 1.0 / 3.0);
        assert_eq!(topk_accuracy(&preds, &truths, 2).unwrap(), 1.0);
        // Short prediction lists are judged on what they contain.
        let short = vec![vec![0], vec![], vec![2]];
        assert_eq!(topk_accuracy(&short, &truths, 5).unwrap(), 1.0 / 3.0);
        assert!(topk_accuracy(&preds, &truths, 0).is_err());
        assert!(topk_accuracy(&preds, &truths[..2], 1).is_err());
    }

    fn blobs(n: usize, per: usize, noise: f64, seed: u64) -> FeatureDataset {
        generate_synthetic(&SynthConfig {
            n_categories: n,
            samples_per_category: per,
            dim: 5,
            hierarchy_branching: 2,
            noise_scale: noise,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn flat_baseline_classifies_separable_blobs() {
        let ds = blobs(4, 25, 0.4, 31);
        let model = train_flat_baseline(&ds, &TrainConfig::default()).unwrap();
        assert_eq!(model.classifiers.len(), 4);
        let mut preds = Vec::new();
        let truths: Vec<usize> = ds.labels().iter().map(|&l| l as usize).collect();
        for i in 0..ds.n_samples() {
            let p = predict_flat(&model, &ds.row(i).to_vec()).unwrap();
            assert_eq!(p.classifier_evals, 4);
            assert_eq!(p.ranked.len(), 4);
            for w in p.ranked.windows(2) {
                assert!(w[0].1 >= w[1].1);
            }
            preds.push(p.top_k(5));
        }
        assert!(topk_accuracy(&preds, &truths, 1).unwrap() >= 0.9);
    }

    #[test]
    fn benchmark_produces_complete_rows() {
        let ds = blobs(6, 30, 0.8, 7);
        let cfg = BenchConfig {
            sweep: vec![
                SweepEntry {
                    branching: 2,
                    depth: 2,
                    beam: 2,
                    n_trees: 1,
                },
                SweepEntry {
                    branching: 2,
                    depth: 2,
                    beam: 2,
                    n_trees: 2,
                },
            ],
            train_per_class: 20,
            test_per_class: 8,
            repeats: 2,
            include_flat: true,
            ..BenchConfig::default()
        };
        let report = run_benchmark(&ds, &cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        let single = &report.rows[0];
        assert!(single.ensemble_top1.is_none());
        assert!(single.flat_top1.is_some());
        assert!(single.exhaustive_top1.is_some());
        for v in [
            single.greedy_top1,
            single.beam_top1,
            single.beam_top5,
            single.flat_top1.unwrap(),
        ] {
            assert!((0.0..=1.0).contains(&v), "{v}");
        }
        assert!(single.n_classifiers >= 6.0);
        assert_eq!(single.flat_evals, Some(6.0));
        let multi = &report.rows[1];
        assert!(multi.ensemble_top1.is_some());

        // Accuracy fields are reproducible once timing is stripped.
        let mut a = report.clone();
        let mut b = run_benchmark(&ds, &cfg).unwrap();
        a.strip_timing();
        b.strip_timing();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert!(a.render_table().contains("greedy@1"));
    }

    #[test]
    fn beam_top_probability_dominates_greedy_on_two_level_trees() {
        // For trees whose leaves all sit within depth 2, the beam's
        // final candidates always include the greedy path. Plant a
        // 3-way hierarchy so the 3-way split recovers balanced groups
        // and no leaf is pushed past depth 2 (the assert guards this).
        let ds = generate_synthetic(&SynthConfig {
            n_categories: 9,
            samples_per_category: 20,
            dim: 5,
            hierarchy_branching: 3,
            noise_scale: 1.2,
            seed: 3,
        })
        .unwrap();
        let cfg = PipelineConfig {
            branching: 3,
            depth: 2,
            ..PipelineConfig::default()
        };
        let container = train_pipeline(&ds, &cfg).unwrap();
        let tree = &container.trees[0];
        assert!(tree.tree.nodes.iter().all(|n| n.depth <= 2));
        for i in 0..ds.n_samples() {
            let x = ds.row(i).to_vec();
            let g = predict_greedy(tree, &x).unwrap();
            for q in [1usize, 2, 3, 5] {
                let b = predict_nbest(tree, &x, q).unwrap();
                assert!(
                    b.ranked[0].1 >= g.ranked[0].1 - 1e-15,
                    "row {i} q={q}: beam {} < greedy {}",
                    b.ranked[0].1,
                    g.ranked[0].1
                );
            }
        }
    }
}
