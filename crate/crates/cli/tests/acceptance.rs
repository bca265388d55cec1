//! Acceptance gate: one test per shipping criterion, each printing a
//! single `criterion NN (<name>): pass` line (run with `--nocapture`
//! to see the lines; a failed criterion fails its test).

use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vistree::dataio::{
    compute_stats, generate_synthetic, split_per_class, CategoryStats, FeatureDataset,
    SynthConfig,
};
use vistree::eval::{predict_flat, train_flat_baseline};
use vistree::infer::{predict_ensemble, predict_exhaustive, predict_greedy, predict_nbest};
use vistree::metric::{build_affinity, distance_fast, distance_naive};
use vistree::svm::{train_pipeline, PipelineConfig};
use vistree::tree::{build_tree, validate_tree};
use vistree::{TrainConfig, TreeModel};

fn verdict(criterion: usize, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {criterion:2} ({name}): {} — {detail}",
        if ok { "pass" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} ({name}): {detail}");
}

fn random_pair(rng: &mut ChaCha8Rng, d: usize) -> (Array2<f32>, Array2<f32>) {
    let na = rng.random_range(5..=200);
    let nb = rng.random_range(5..=200);
    let mut gen = |n: usize| {
        let mut m = Array2::<f32>::zeros((n, d));
        for v in m.iter_mut() {
            *v = rng.random_range(-10.0f32..10.0);
        }
        m
    };
    (gen(na), gen(nb))
}

fn stats_of(m: &Array2<f32>) -> CategoryStats {
    let labels = vec![0u32; m.nrows()];
    let ds = FeatureDataset::from_parts(m.clone(), labels).unwrap();
    compute_stats(&ds).remove(0)
}

#[test]
fn c01_metric_identity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut pairs = 0usize;
    for round in 0..200 {
        let d = [2, 16, 128][round % 3];
        let (a, b) = random_pair(&mut rng, d);
        let naive = distance_naive(a.view(), b.view()).unwrap();
        let fast = distance_fast(&stats_of(&a), &stats_of(&b)).unwrap();
        let rel = (fast - naive).abs() / naive;
        worst = worst.max(rel);
        pairs += 1;
    }
    let elapsed = start.elapsed();
    let ok = pairs >= 200 && worst <= 1e-9 && elapsed.as_secs_f64() <= 5.0;
    verdict(
        1,
        "metric identity",
        ok,
        &format!("{pairs} pairs, worst relative error {worst:.3e}, {elapsed:.2?}"),
    );
}

#[test]
fn c02_metric_speed() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let d = 64;
    let mut gen = |n: usize| {
        let mut m = Array2::<f32>::zeros((n, d));
        for v in m.iter_mut() {
            *v = rng.random_range(-5.0f32..5.0);
        }
        m
    };
    let a = gen(1000);
    let b = gen(1000);
    let (sa, sb) = (stats_of(&a), stats_of(&b));

    let mut ratios = Vec::new();
    for _ in 0..20 {
        let t0 = Instant::now();
        let naive = distance_naive(a.view(), b.view()).unwrap();
        let t_naive = t0.elapsed().as_secs_f64();

        let reps = 1000;
        let t1 = Instant::now();
        let mut sink = 0.0;
        for _ in 0..reps {
            sink += distance_fast(&sa, &sb).unwrap();
        }
        let t_fast = t1.elapsed().as_secs_f64() / reps as f64;
        assert!((sink / reps as f64 - naive).abs() / naive < 1e-9);
        ratios.push(t_naive / t_fast.max(1e-12));
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    verdict(
        2,
        "metric speed",
        median >= 20.0,
        &format!("median speedup {median:.0}x over 20 trials at N=1000, D=64"),
    );
}

fn random_stats(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<CategoryStats> {
    (0..n)
        .map(|_| CategoryStats {
            mean: Array1::from_iter((0..d).map(|_| rng.random_range(-8.0f64..8.0))),
            variance_sq: rng.random_range(0.0f64..4.0),
            count: rng.random_range(1..60),
        })
        .collect()
}

#[test]
fn c03_affinity_well_formed() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut checked = 0usize;
    for _ in 0..50 {
        let n = rng.random_range(2..40);
        let d = rng.random_range(1..16);
        let stats = random_stats(&mut rng, n, d);
        let aff = build_affinity(&stats, 7).unwrap();
        for i in 0..n {
            assert_eq!(aff.values[[i, i]], 1.0, "diagonal must be exactly 1");
            for j in 0..n {
                let v = aff.values[[i, j]];
                assert!(v > 0.0 && v <= 1.0, "entry ({i},{j}) = {v} out of (0,1]");
                assert_eq!(
                    v.to_bits(),
                    aff.values[[j, i]].to_bits(),
                    "asymmetry at ({i},{j})"
                );
            }
        }

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<CategoryStats> = perm.iter().map(|&i| stats[i].clone()).collect();
        let paff = build_affinity(&permuted, 7).unwrap();
        for pi in 0..n {
            for pj in 0..n {
                assert_eq!(
                    paff.values[[pi, pj]].to_bits(),
                    aff.values[[perm[pi], perm[pj]]].to_bits(),
                    "permutation equivariance broken at ({pi},{pj})"
                );
            }
        }
        checked += 1;
    }
    verdict(
        3,
        "affinity well-formedness",
        checked == 50,
        &format!("{checked} random stat sets, exact symmetry and equivariance"),
    );
}

#[test]
fn c04_tree_invariants() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let ks = [2usize, 4, 6, 10, 32];
    let ls = [2usize, 3, 4];
    let mut builds = 0usize;
    for i in 0..100u64 {
        let k = ks[i as usize % ks.len()];
        let l = ls[(i as usize / ks.len()) % ls.len()];
        let n = rng.random_range(3..=200);
        let stats = random_stats(&mut rng, n, 4);
        let aff = build_affinity(&stats, 7).unwrap();
        let tree = build_tree(&aff, k, l, i).unwrap();
        let issues = validate_tree(&tree);
        assert!(issues.is_empty(), "K={k} L={l} N={n}: {issues:?}");
        assert_eq!(tree.n_leaves(), n, "K={k} L={l}: leaf count");
        builds += 1;
    }
    let elapsed = start.elapsed();
    let ok = builds == 100 && elapsed.as_secs_f64() <= 60.0;
    verdict(
        4,
        "tree invariants",
        ok,
        &format!("{builds} fuzzed builds clean in {elapsed:.2?}"),
    );
}

/// Shared fixture for criteria 5-8: trained models with <= 64 leaves
/// plus 100 fuzzed queries each.
struct SuiteEntry {
    model: TreeModel,
    branching: usize,
    depth: usize,
    queries: Vec<Vec<f32>>,
}

static SUITE: OnceLock<Vec<SuiteEntry>> = OnceLock::new();

fn suite() -> &'static [SuiteEntry] {
    SUITE.get_or_init(|| {
        // The criterion-8 budget assumes no leaf sits past depth L.
        // Planting the data hierarchy at the tree's own fan-out with
        // n <= K^L makes balanced recovery the natural outcome, and
        // noise 0.3 keeps recovery clean even for the deep binary
        // shape. The depth assert below pins conformance per seed.
        let shapes: [(usize, usize, usize); 10] = [
            (8, 2, 3),
            (16, 4, 2),
            (9, 3, 2),
            (27, 3, 3),
            (16, 2, 4),
            (32, 8, 2),
            (64, 8, 2),
            (12, 4, 2),
            (20, 5, 2),
            (25, 5, 2),
        ];
        let mut entries = Vec::new();
        for (si, &(n, k, l)) in shapes.iter().enumerate() {
            for seed in 0..3u64 {
                let ds = generate_synthetic(&SynthConfig {
                    n_categories: n,
                    samples_per_category: 15,
                    dim: 8,
                    hierarchy_branching: k,
                    noise_scale: 0.3,
                    seed: seed * 311 + si as u64,
                })
                .unwrap();
                let cfg = PipelineConfig {
                    branching: k,
                    depth: l,
                    train: TrainConfig {
                        seed,
                        ..TrainConfig::default()
                    },
                    ..PipelineConfig::default()
                };
                let container = train_pipeline(&ds, &cfg).unwrap();
                let model = container.trees.into_iter().next().unwrap();
                let deepest = model.tree.nodes.iter().map(|nd| nd.depth).max().unwrap();
                assert!(
                    deepest <= l,
                    "shape ({n},{k},{l}) seed {seed}: tree reaches depth {deepest}"
                );
                let mut qrng = ChaCha8Rng::seed_from_u64(9000 + si as u64 * 17 + seed);
                let queries = (0..100)
                    .map(|_| (0..8).map(|_| qrng.random_range(-12.0f32..12.0)).collect())
                    .collect();
                entries.push(SuiteEntry {
                    model,
                    branching: k,
                    depth: l,
                    queries,
                });
            }
        }
        entries
    })
}

#[test]
fn c05_beam_exactness() {
    let mut models = 0usize;
    let mut queries = 0usize;
    for entry in suite() {
        assert!(entry.model.tree.n_leaves() <= 64);
        let q = entry.model.tree.n_leaves();
        for x in &entry.queries {
            let ex = predict_exhaustive(&entry.model, x).unwrap();
            let nb = predict_nbest(&entry.model, x, q).unwrap();
            assert_eq!(ex.ranked[0].0, nb.ranked[0].0, "top path differs");
            let (pe, pb) = (ex.ranked[0].1, nb.ranked[0].1);
            if pe > 0.0 {
                assert!((pe - pb).abs() / pe <= 1e-12, "probability gap {pe} vs {pb}");
            } else {
                assert_eq!(pb, 0.0);
            }
            queries += 1;
        }
        models += 1;
    }
    verdict(
        5,
        "beam exactness",
        models == 30 && queries == 3000,
        &format!("{models} models x 100 queries, full-width beam == exhaustive"),
    );
}

#[test]
fn c06_greedy_degeneration() {
    let mut agree = 0usize;
    let mut total = 0usize;
    for entry in suite() {
        for x in &entry.queries {
            let g = predict_greedy(&entry.model, x).unwrap();
            let b = predict_nbest(&entry.model, x, 1).unwrap();
            agree += usize::from(g.ranked[0].0 == b.ranked[0].0);
            total += 1;
        }
    }
    verdict(
        6,
        "greedy degeneration",
        total == 3000 && agree == total,
        &format!("{agree}/{total} fuzzed queries identical"),
    );
}

#[test]
fn c07_beam_monotonicity() {
    let widths = [1usize, 2, 3, 5, 10];
    let mut violations = 0usize;
    let mut checked = 0usize;
    for entry in suite() {
        for x in &entry.queries {
            let mut prev = -1.0f64;
            for &q in &widths {
                let p = predict_nbest(&entry.model, x, q).unwrap().ranked[0].1;
                if p < prev {
                    violations += 1;
                }
                prev = p;
                checked += 1;
            }
        }
    }
    verdict(
        7,
        "beam monotonicity",
        violations == 0,
        &format!("{checked} (query, width) runs, {violations} decreases"),
    );
}

#[test]
fn c08_cost_budget() {
    let widths = [1usize, 2, 3, 5, 10];
    let mut over = 0usize;
    let mut runs = 0usize;
    for entry in suite() {
        let (k, l) = (entry.branching, entry.depth);
        for x in &entry.queries {
            for &q in &widths {
                let evals = predict_nbest(&entry.model, x, q).unwrap().classifier_evals;
                if evals > k + (l - 1) * q * k {
                    over += 1;
                }
                runs += 1;
            }
        }
    }

    // Flat baseline always evaluates one classifier per category.
    let ds = generate_synthetic(&SynthConfig {
        n_categories: 32,
        samples_per_category: 10,
        dim: 8,
        hierarchy_branching: 2,
        noise_scale: 0.8,
        seed: 808,
    })
    .unwrap();
    let flat = train_flat_baseline(&ds, &TrainConfig::default()).unwrap();
    let mut flat_ok = true;
    for i in 0..ds.n_samples() {
        let pred = predict_flat(&flat, ds.row(i).as_slice().unwrap()).unwrap();
        flat_ok &= pred.classifier_evals == 32;
    }

    verdict(
        8,
        "cost budget",
        over == 0 && flat_ok,
        &format!("{over}/{runs} beam runs over K+(L-1)QK; flat evals == N: {flat_ok}"),
    );
}

/// 64 categories planted as 16 groups of 4 (a hierarchy neither tree
/// shape under test matches, so learned splits carry genuine
/// ambiguity and greedy descent makes recoverable early mistakes),
/// split 100/20 per class, rows L2-normalized as the training
/// pipeline expects for comparable edge-score scales. Noise 2.5
/// leaves greedy around 70% so path recovery has room to show.
fn ordering_data(seed: u64) -> (FeatureDataset, FeatureDataset) {
    let ds = generate_synthetic(&SynthConfig {
        n_categories: 64,
        samples_per_category: 120,
        dim: 32,
        hierarchy_branching: 16,
        noise_scale: 2.5,
        seed,
    })
    .unwrap();
    let (train, test) = split_per_class(&ds, 100, 20, seed).unwrap();
    (train.l2_normalized(), test.l2_normalized())
}

fn top1(model: &TreeModel, test: &FeatureDataset, beam: Option<usize>) -> f64 {
    let mut hits = 0usize;
    for i in 0..test.n_samples() {
        let row = test.row(i);
        let x = row.as_slice().unwrap();
        let pred = match beam {
            None => predict_greedy(model, x).unwrap(),
            Some(q) => predict_nbest(model, x, q).unwrap(),
        };
        hits += usize::from(pred.top() == test.label(i) as usize);
    }
    hits as f64 / test.n_samples() as f64
}

#[test]
fn c09_beam_beats_greedy() {
    let start = Instant::now();
    let mut wins = 0usize;
    let mut strict = 0usize;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let (train, test) = ordering_data(seed);
        let cfg = PipelineConfig {
            branching: 4,
            depth: 3,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            ..PipelineConfig::default()
        };
        let model = &train_pipeline(&train, &cfg).unwrap().trees[0];
        let g = top1(model, &test, None);
        let b = top1(model, &test, Some(5));
        wins += usize::from(b >= g);
        strict += usize::from(b > g);
        lines.push(format!("{g:.3}->{b:.3}"));
    }
    let elapsed = start.elapsed();
    let ok = wins >= 9 && strict >= 5 && elapsed.as_secs_f64() <= 300.0;
    verdict(
        9,
        "beam beats greedy",
        ok,
        &format!(
            "beam>=greedy in {wins}/10, strictly in {strict}/10, {elapsed:.1?} [{}]",
            lines.join(" ")
        ),
    );
}

#[test]
fn c10_flat_parity() {
    let mut hier = 0.0;
    let mut flat_acc = 0.0;
    for seed in 0..3u64 {
        let (train, test) = ordering_data(seed);
        let cfg = PipelineConfig {
            branching: 8,
            depth: 2,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            ..PipelineConfig::default()
        };
        let model = &train_pipeline(&train, &cfg).unwrap().trees[0];
        hier += top1(model, &test, Some(5));

        let flat = train_flat_baseline(
            &train,
            &TrainConfig {
                seed,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let mut hits = 0usize;
        for i in 0..test.n_samples() {
            let pred = predict_flat(&flat, test.row(i).as_slice().unwrap()).unwrap();
            hits += usize::from(pred.top() == test.label(i) as usize);
        }
        flat_acc += hits as f64 / test.n_samples() as f64;
    }
    hier /= 3.0;
    flat_acc /= 3.0;
    let gap = (hier - flat_acc).abs();
    verdict(
        10,
        "flat parity",
        gap <= 0.03,
        &format!("T(8,2) beam {hier:.4} vs flat {flat_acc:.4}, gap {:.2} points", gap * 100.0),
    );
}

#[test]
fn c11_ensemble_benefit() {
    let mut ens_mean = 0.0;
    let mut single_mean = 0.0;
    for seed in 0..3u64 {
        let (train, test) = ordering_data(seed);
        let cfg = PipelineConfig {
            branching: 8,
            depth: 2,
            n_trees: 5,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            ..PipelineConfig::default()
        };
        let container = train_pipeline(&train, &cfg).unwrap();

        let mut hits = 0usize;
        for i in 0..test.n_samples() {
            let pred = predict_ensemble(&container, test.row(i).as_slice().unwrap(), 5).unwrap();
            hits += usize::from(pred.top() == test.label(i) as usize);
        }
        ens_mean += hits as f64 / test.n_samples() as f64;

        let singles: f64 = container
            .trees
            .iter()
            .map(|t| top1(t, &test, Some(5)))
            .sum::<f64>()
            / container.trees.len() as f64;
        single_mean += singles;
    }
    ens_mean /= 3.0;
    single_mean /= 3.0;
    let ok = ens_mean >= single_mean - 0.005;
    verdict(
        11,
        "ensemble benefit",
        ok,
        &format!("5-tree ensemble {ens_mean:.4} vs mean single {single_mean:.4}"),
    );
}

#[test]
fn c12_cli_determinism() {
    let bin = env!("CARGO_BIN_EXE_vistree");
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "vistree {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out.stdout
    };

    run(&[
        "synth", "--categories", "12", "--per-class", "20", "--dim", "6", "--hier-branching",
        "2", "--noise", "0.6", "--seed", "5", "--out", &p("d.vtd"),
    ]);
    let train_args = |model: String| {
        vec![
            "train".into(), "--data".into(), p("d.vtd"), "--model".into(), model,
            "--branching".into(), "3".into(), "--depth".into(), "2".into(),
            "--trees".into(), "2".into(), "--seed".into(), "9".into(),
        ]
    };
    fn to_refs(v: &[String]) -> Vec<&str> {
        v.iter().map(String::as_str).collect()
    }
    let args1 = train_args(p("m1.vtm"));
    run(&to_refs(&args1));
    let args2 = train_args(p("m2.vtm"));
    run(&to_refs(&args2));
    let m1 = std::fs::read(p("m1.vtm")).unwrap();
    let m2 = std::fs::read(p("m2.vtm")).unwrap();
    let trains_match = m1 == m2;

    let mut predicts_match = true;
    for mode in ["beam", "ensemble"] {
        let base = [
            "predict", "--model", &p("m1.vtm"), "--data", &p("d.vtd"), "--mode", mode,
            "--beam", "4", "--top", "0",
        ];
        let one = run(&[&base[..], &["--threads", "1"]].concat());
        let four = run(&[&base[..], &["--threads", "4"]].concat());
        predicts_match &= one == four && !one.is_empty();
    }

    verdict(
        12,
        "cli determinism",
        trains_match && predicts_match,
        &format!(
            "retrain byte-identical: {trains_match}; predict schedule-independent: {predicts_match}"
        ),
    );
}
