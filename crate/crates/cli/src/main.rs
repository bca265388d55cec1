//! Train, inspect, and query tree-structured multi-class models.
//!
//! Exit codes: 0 success, 2 bad usage or parameters, 3 I/O failure,
//! 4 malformed file, 5 training failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vistree::dataio::{generate_synthetic, load_dataset, save_dataset, DataFormat, SynthConfig};
use vistree::eval::{run_benchmark, BenchConfig, SweepEntry};
use vistree::infer::{predict_ensemble, predict_exhaustive, predict_greedy, predict_nbest};
use vistree::svm::{train_pipeline, PipelineConfig};
use vistree::tree::export_dot;
use vistree::{Error, ModelContainer, Prediction, TrainConfig};

#[derive(Parser)]
#[command(name = "vistree", version, about = "Hierarchical multi-class classification over learned category trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Bin,
}

impl From<FormatArg> for DataFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => DataFormat::Csv,
            FormatArg::Bin => DataFormat::Binary,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Greedy,
    Beam,
    Exhaustive,
    Ensemble,
}

/// Flags shared by every training-like subcommand.
#[derive(Args)]
struct TrainFlags {
    /// Branching bound K.
    #[arg(long, default_value_t = 32)]
    branching: usize,
    /// Depth cap L.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Trees in the model; above 1 each tree trains on its own fold.
    #[arg(long, default_value_t = 1)]
    trees: usize,
    /// Regularization strength.
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    /// Training epochs per classifier.
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Per-category row cap for root-edge training sets.
    #[arg(long, default_value_t = 600)]
    root_subsample: usize,
    /// Neighbor rank for affinity bandwidths.
    #[arg(long, default_value_t = 7)]
    tuning_k: usize,
    /// L2-normalize rows before training and at query time.
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainFlags {
    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            branching: self.branching,
            depth: self.depth,
            n_trees: self.trees,
            tuning_k: self.tuning_k,
            normalize: self.normalize,
            train: TrainConfig {
                lambda: self.lambda,
                epochs: self.epochs,
                root_subsample: self.root_subsample,
                seed: self.seed,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted category structure.
    Synth {
        /// Number of categories.
        #[arg(long, default_value_t = 16)]
        categories: usize,
        /// Samples per category.
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        /// Feature dimension.
        #[arg(long, default_value_t = 16)]
        dim: usize,
        /// Branching of the planted hierarchy.
        #[arg(long, default_value_t = 2)]
        hier_branching: usize,
        /// Standard deviation of per-sample noise around each center.
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Bin)]
        format: FormatArg,
    },
    /// Train a model on a labeled dataset.
    Train {
        /// Training dataset path.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Bin)]
        format: FormatArg,
        /// Output model path.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Rank categories for each query row of a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Query rows; labels in the file are ignored.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Bin)]
        format: FormatArg,
        #[arg(long, value_enum, default_value_t = ModeArg::Beam)]
        mode: ModeArg,
        /// Beam width Q.
        #[arg(long, default_value_t = 5)]
        beam: usize,
        /// Ranked entries printed per query; 0 prints all.
        #[arg(long, default_value_t = 5)]
        top: usize,
        /// Worker threads; output is identical for any value.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Output path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report top-1/top-5 accuracy of a model on a labeled dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Bin)]
        format: FormatArg,
        #[arg(long, value_enum, default_value_t = ModeArg::Beam)]
        mode: ModeArg,
        #[arg(long, default_value_t = 5)]
        beam: usize,
    },
    /// Sweep tree shapes and beam widths over train/test splits.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Bin)]
        format: FormatArg,
        /// Semicolon-separated K,L,Q,trees entries, e.g. "32,2,5,1;10,3,5,1".
        #[arg(long, default_value = "32,2,5,1")]
        sweep: String,
        #[arg(long, default_value_t = 50)]
        train_per_class: usize,
        #[arg(long, default_value_t = 10)]
        test_per_class: usize,
        /// Seeded repetitions averaged into each row.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Include the flat one-vs-rest baseline columns.
        #[arg(long)]
        flat: bool,
        /// Skip exhaustive scoring even on small trees.
        #[arg(long)]
        no_exhaustive: bool,
        /// Write one JSON record per row to this path.
        #[arg(long)]
        jsonl: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Write a model's tree as Graphviz DOT.
    ExportDot {
        #[arg(long)]
        model: PathBuf,
        /// Tree index within the model.
        #[arg(long, default_value_t = 0)]
        tree: usize,
        /// Output path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Io(_) => 3,
                Error::Format { .. } | Error::DimensionMismatch { .. } => 4,
                Error::InvalidParam(_) => 2,
                Error::Train(_) | Error::NoConvergence(_) => 5,
            })
        }
    }
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Synth {
            categories,
            per_class,
            dim,
            hier_branching,
            noise,
            seed,
            out,
            format,
        } => {
            let ds = generate_synthetic(&SynthConfig {
                n_categories: categories,
                samples_per_category: per_class,
                dim,
                hierarchy_branching: hier_branching,
                noise_scale: noise,
                seed,
            })?;
            save_dataset(&ds, &out, format.into())?;
            println!(
                "wrote {} rows ({} categories, dim {}) to {}",
                ds.n_samples(),
                ds.n_categories(),
                ds.dim(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            format,
            model,
            train,
        } => {
            let ds = load_dataset(&data, format.into())?;
            let container = train_pipeline(&ds, &train.pipeline())?;
            container.save(&model)?;
            println!(
                "trained {} tree(s), {} edge classifiers, {} categories -> {}",
                container.trees.len(),
                container.n_classifiers(),
                container.n_categories(),
                model.display()
            );
            Ok(())
        }
        Command::Predict {
            model,
            data,
            format,
            mode,
            beam,
            top,
            threads,
            out,
        } => {
            let container = ModelContainer::load(&model)?;
            let ds = load_dataset(&data, format.into())?;
            let lines = predict_all(&container, &ds, mode, beam, top, threads)?;
            write_text(out.as_deref(), &lines.concat())
        }
        Command::Eval {
            model,
            data,
            format,
            mode,
            beam,
        } => {
            let container = ModelContainer::load(&model)?;
            let ds = load_dataset(&data, format.into())?;
            let mut top1 = 0usize;
            let mut top5 = 0usize;
            let mut evals = 0usize;
            for i in 0..ds.n_samples() {
                let truth = ds.original_id(ds.label(i) as usize);
                let pred = predict_one(&container, ds.row(i).as_slice().unwrap(), mode, beam)?;
                evals += pred.classifier_evals;
                let ids: Vec<u32> = pred
                    .top_k(5)
                    .into_iter()
                    .map(|c| container.category_ids[c])
                    .collect();
                top1 += usize::from(ids.first() == Some(&truth));
                top5 += usize::from(ids.contains(&truth));
            }
            let m = ds.n_samples() as f64;
            println!(
                "queries {} top1 {:.4} top5 {:.4} mean_evals {:.1}",
                ds.n_samples(),
                top1 as f64 / m,
                top5 as f64 / m,
                evals as f64 / m
            );
            Ok(())
        }
        Command::Bench {
            data,
            format,
            sweep,
            train_per_class,
            test_per_class,
            repeats,
            flat,
            no_exhaustive,
            jsonl,
            train,
        } => {
            let ds = load_dataset(&data, format.into())?;
            let pipeline = train.pipeline();
            let cfg = BenchConfig {
                sweep: parse_sweep(&sweep)?,
                train_per_class,
                test_per_class,
                repeats,
                tuning_k: pipeline.tuning_k,
                include_flat: flat,
                include_exhaustive: !no_exhaustive,
                train: pipeline.train,
            };
            let report = run_benchmark(&ds, &cfg)?;
            if let Some(path) = jsonl {
                std::fs::write(&path, report.to_jsonl())?;
            }
            print!("{}", report.render_table());
            Ok(())
        }
        Command::ExportDot { model, tree, out } => {
            let container = ModelContainer::load(&model)?;
            let t = container.trees.get(tree).ok_or_else(|| {
                Error::InvalidParam(format!(
                    "model holds {} tree(s); index {tree} is out of range",
                    container.trees.len()
                ))
            })?;
            let names: Vec<String> = container.category_ids.iter().map(u32::to_string).collect();
            write_text(out.as_deref(), &export_dot(&t.tree, Some(&names)))
        }
    }
}

fn parse_sweep(arg: &str) -> Result<Vec<SweepEntry>, Error> {
    let mut entries = Vec::new();
    for part in arg.split(';').filter(|p| !p.trim().is_empty()) {
        let fields: Vec<usize> = part
            .split(',')
            .map(|f| f.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::InvalidParam(format!("bad sweep entry {part:?}, want K,L,Q,trees")))?;
        if fields.len() != 4 {
            return Err(Error::InvalidParam(format!(
                "sweep entry {part:?} has {} fields, want K,L,Q,trees",
                fields.len()
            )));
        }
        entries.push(SweepEntry {
            branching: fields[0],
            depth: fields[1],
            beam: fields[2],
            n_trees: fields[3],
        });
    }
    if entries.is_empty() {
        return Err(Error::InvalidParam("empty sweep".into()));
    }
    Ok(entries)
}

fn predict_one(
    container: &ModelContainer,
    x: &[f32],
    mode: ModeArg,
    beam: usize,
) -> Result<Prediction, Error> {
    // predict_ensemble applies the container's preprocessing itself.
    if let ModeArg::Ensemble = mode {
        return predict_ensemble(container, x, beam);
    }
    let q = container.prepare_query(x)?;
    match mode {
        ModeArg::Greedy => predict_greedy(&container.trees[0], &q),
        ModeArg::Beam => predict_nbest(&container.trees[0], &q, beam),
        ModeArg::Exhaustive => predict_exhaustive(&container.trees[0], &q),
        ModeArg::Ensemble => unreachable!(),
    }
}

/// One output line per query, in input order regardless of `threads`.
fn predict_all(
    container: &ModelContainer,
    ds: &vistree::FeatureDataset,
    mode: ModeArg,
    beam: usize,
    top: usize,
    threads: usize,
) -> Result<Vec<String>, Error> {
    if threads == 0 {
        return Err(Error::InvalidParam("threads must be >= 1".into()));
    }
    let m = ds.n_samples();
    let render = |i: usize| -> Result<String, Error> {
        let pred = predict_one(container, ds.row(i).as_slice().unwrap(), mode, beam)?;
        let take = if top == 0 { pred.ranked.len() } else { top };
        let mut line = format!("{i}");
        for &(cat, p) in pred.ranked.iter().take(take) {
            line.push_str(&format!(" {}:{}", container.category_ids[cat], p));
        }
        line.push('\n');
        Ok(line)
    };

    if threads == 1 {
        return (0..m).map(render).collect();
    }
    let chunk = m.div_ceil(threads);
    let mut results: Vec<Result<Vec<String>, Error>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for t in 0..threads {
            let lo = (t * chunk).min(m);
            let hi = ((t + 1) * chunk).min(m);
            handles.push(scope.spawn(move || (lo..hi).map(render).collect()));
        }
        for h in handles {
            results.push(h.join().expect("prediction worker panicked"));
        }
    });
    let mut lines = Vec::with_capacity(m);
    for r in results {
        lines.extend(r?);
    }
    Ok(lines)
}
