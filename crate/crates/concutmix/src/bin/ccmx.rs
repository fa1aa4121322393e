//! Experiment front door: dataset construction, training, evaluation, ablation
//! grids, manifest replay, and a self-check against brute-force reference
//! implementations.
//!
//! Every run writes a `manifest.json` into its output directory; `ccmx rerun`
//! replays a manifest into a fresh directory and reproduces all outputs byte for
//! byte.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use concutmix::experiment::{
    apply_overrides, read_manifest, run_evaluate, run_grid, run_make_dataset, run_manifest,
    run_train, DatasetSource, EvaluateRequest, GridRequest, MakeDatasetRequest, SyntheticSource,
    TrainRequest,
};
use concutmix::metrics::GroupSpec;
use concutmix::oracle;
use concutmix::rectify::{CountActivation, SimilarityMetric};
use concutmix::trainer::TrainConfig;

#[derive(Parser)]
#[command(
    name = "ccmx",
    version,
    about = "Semantically consistent CutMix for long-tailed classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a long-tailed train split plus balanced val split and write both to disk
    MakeDataset(MakeDatasetArgs),
    /// Train a model; writes metrics.csv, summary.json, census.json, model.ccmx
    Train(TrainArgs),
    /// Evaluate a checkpoint: accuracy groups, confusion matrix, calibration
    Evaluate(EvaluateArgs),
    /// Run a cartesian ablation grid, all cells sharing one dataset
    Grid(GridArgs),
    /// Replay a manifest.json into a fresh directory, byte-identically
    Rerun(RerunArgs),
    /// Check library outputs against independent brute-force references
    OracleCheck(OracleCheckArgs),
}

#[derive(Args)]
struct MakeDatasetArgs {
    /// Synthetic dataset spec as a key=value list, e.g.
    /// "classes=10,per_class=500,imbalance=100,separation=4,seed=0".
    /// Empty means all defaults.
    #[arg(long, default_value = "")]
    synthetic: String,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Synthetic dataset spec (key=value list); see make-dataset
    #[arg(long, conflicts_with_all = ["dataset", "val_dataset"])]
    synthetic: Option<String>,
    /// Training split file (LTDS1)
    #[arg(long, requires = "val_dataset")]
    dataset: Option<PathBuf>,
    /// Validation split file (LTDS1)
    #[arg(long, requires = "dataset")]
    val_dataset: Option<PathBuf>,
    /// Subsample --dataset to this imbalance factor before training
    #[arg(long, requires = "dataset")]
    imbalance: Option<f64>,
    /// JSON config file mirroring the training config fields; absent fields keep
    /// their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override as key=value; dots reach nested fields
    /// (e.g. group_spec.many_threshold=50). Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Semantic label support size
    #[arg(long)]
    topk: Option<usize>,
    /// Confidence scale for label rectification
    #[arg(long)]
    omega: Option<f64>,
    /// Count activation inside the confidence: log or linear
    #[arg(long)]
    phi: Option<String>,
    /// Similarity metric: euclid or cosine
    #[arg(long)]
    metric: Option<String>,
    /// Write an extra copy of the final checkpoint here
    /// (one is always written to OUT/model.ccmx)
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint file to evaluate
    #[arg(long)]
    checkpoint_in: PathBuf,
    /// Dataset file to evaluate on (LTDS1)
    #[arg(long)]
    data: PathBuf,
    /// Training census JSON (defines the many/medium/few groups)
    #[arg(long)]
    census: PathBuf,
    /// Number of calibration bins
    #[arg(long, default_value_t = 15)]
    bins: usize,
    /// Classes with more training samples than this are "many"
    #[arg(long, default_value_t = 100)]
    many_threshold: usize,
    /// Classes with fewer training samples than this are "few"
    #[arg(long, default_value_t = 20)]
    few_threshold: usize,
    /// Evaluation batch size
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    /// Grid spec JSON file: dataset, base config, and ablation axes
    #[arg(long)]
    spec: PathBuf,
    /// Output directory (one subdirectory per cell)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RerunArgs {
    /// manifest.json from a previous run
    #[arg(long)]
    manifest: PathBuf,
    /// Fresh output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleCheckArgs {
    /// Seeded instances per checked quantity
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::MakeDataset(args) => {
            let req = MakeDatasetRequest { synthetic: SyntheticSource::parse_spec(&args.synthetic)? };
            run_make_dataset(&req, &args.out)?;
            println!(
                "wrote train.ltds ({} classes, imbalance {}), val.ltds, census.json, manifest.json to {}",
                req.synthetic.num_classes,
                req.synthetic.imbalance_factor,
                args.out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(args) => {
            let req = train_request(&args)?;
            let summary = run_train(&req, &args.out)?;
            if let Some(extra) = &args.checkpoint_out {
                fs::copy(args.out.join("model.ccmx"), extra)
                    .with_context(|| format!("copying checkpoint to {}", extra.display()))?;
            }
            match &summary.last_epoch {
                Some(rec) => println!(
                    "trained {} epochs: val top-1 {:.4}, ece {:.2}, mean gamma {:.4} (outputs in {})",
                    summary.epochs,
                    rec.val_top1,
                    rec.ece,
                    rec.gamma_mean,
                    args.out.display()
                ),
                None => println!("trained 0 epochs; untrained model written to {}", args.out.display()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate(args) => {
            let spec = GroupSpec {
                many_threshold: args.many_threshold,
                few_threshold: args.few_threshold,
            };
            let req = EvaluateRequest {
                checkpoint: args.checkpoint_in,
                data: args.data,
                census: args.census,
                group_spec: spec,
                ece_bins: args.bins,
                batch_size: args.batch_size,
            };
            let summary = run_evaluate(&req, &args.out)?;
            let group = |v: Option<f64>| v.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
            println!(
                "top-1 {:.4} | many {} medium {} few {} | ece {:.2} ({} samples)",
                summary.top1,
                group(summary.many_acc),
                group(summary.medium_acc),
                group(summary.few_acc),
                summary.ece,
                summary.samples
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Grid(args) => {
            let text = fs::read_to_string(&args.spec)
                .with_context(|| format!("reading {}", args.spec.display()))?;
            let req: GridRequest = serde_json::from_str(&text)?;
            let summary = run_grid(&req, &args.out)?;
            println!(
                "grid {:?}: {} cells, {} failed (grid.csv in {})",
                req.name,
                summary.cells,
                summary.failed,
                args.out.display()
            );
            Ok(if summary.failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Rerun(args) => {
            let manifest = read_manifest(&args.manifest)?;
            run_manifest(&manifest, &args.out)?;
            println!("replayed {} run into {}", manifest.command, args.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck(args) => {
            let outcomes = oracle::run_all(args.instances, args.seed);
            let mut failed = false;
            for outcome in &outcomes {
                if outcome.passed() {
                    println!("{}: PASS ({} instances)", outcome.name, outcome.instances);
                } else {
                    failed = true;
                    println!(
                        "{}: FAIL ({} of {} instances mismatched)",
                        outcome.name, outcome.mismatches, outcome.instances
                    );
                    if let Some(detail) = &outcome.first_failure {
                        println!("  first failing instance: {detail}");
                    }
                }
            }
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
    }
}

fn train_request(args: &TrainArgs) -> anyhow::Result<TrainRequest> {
    let base: TrainConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };

    let mut overrides = args.overrides.clone();
    if let Some(k) = args.topk {
        overrides.push(format!("topk={k}"));
    }
    if let Some(w) = args.omega {
        overrides.push(format!("omega={w}"));
    }
    if let Some(phi) = &args.phi {
        overrides.push(format!("activation={}", CountActivation::parse(phi)?.name()));
    }
    if let Some(metric) = &args.metric {
        overrides.push(format!("metric={}", SimilarityMetric::parse(metric)?.name()));
    }
    let config = apply_overrides(&base, &overrides)?;

    let dataset = if let Some(spec) = &args.synthetic {
        DatasetSource::Synthetic(SyntheticSource::parse_spec(spec)?)
    } else if let (Some(train), Some(val)) = (&args.dataset, &args.val_dataset) {
        DatasetSource::Files {
            train: train.clone(),
            val: val.clone(),
            imbalance_factor: args.imbalance,
            seed: config.seed,
        }
    } else {
        bail!("provide a data source: --synthetic <spec> or --dataset <path> --val-dataset <path>");
    };
    Ok(TrainRequest { dataset, config })
}
