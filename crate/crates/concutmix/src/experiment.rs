//! Experiment orchestration: materialize datasets, run training, evaluate
//! checkpoints, sweep parameter grids, and replay any of those from a manifest.
//!
//! Every run writes a `manifest.json` holding the complete typed request and
//! nothing else (no timestamps, no absolute output paths), so replaying a manifest
//! into a fresh directory reproduces every output file byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    build_longtailed, make_synthetic_source, make_synthetic_val, ClassCensus, Dataset,
    SamplerKind, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{confusion_matrix, CalibrationReport, GroupSpec};
use crate::rectify::{CountActivation, SimilarityMetric};
use crate::semantic::{load_checkpoint, save_checkpoint};
use crate::trainer::{evaluate_model, train, EpochRecord, TrainConfig};

pub const MANIFEST_VERSION: u32 = 1;

// ── Dataset sources ───────────────────────────────────────────────────────

/// Fully parameterized synthetic long-tailed dataset: a balanced source of
/// `per_class` samples per class is generated, the training split subsampled to an
/// exponential profile with the given imbalance factor, and a balanced validation
/// split drawn from the same class patterns with fresh noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSource {
    pub num_classes: usize,
    pub per_class: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub class_separation: f64,
    pub imbalance_factor: f64,
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class: 500,
            width: 8,
            height: 8,
            channels: 3,
            class_separation: 4.0,
            imbalance_factor: 100.0,
            val_per_class: 50,
            seed: 0,
        }
    }
}

impl SyntheticSource {
    /// Parse a compact `key=value` comma list, e.g.
    /// `classes=10,per_class=500,imbalance=100,separation=4,seed=7`.
    /// Unspecified keys keep their defaults.
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let mut src = Self::default();
        for part in spec.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (key, value) = part.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("expected key=value, got {part:?}"))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::InvalidConfig(format!("cannot parse {value:?} as {what} for {key}"))
            };
            match key {
                "classes" => src.num_classes = value.parse().map_err(|_| bad("an integer"))?,
                "per_class" => src.per_class = value.parse().map_err(|_| bad("an integer"))?,
                "width" => src.width = value.parse().map_err(|_| bad("an integer"))?,
                "height" => src.height = value.parse().map_err(|_| bad("an integer"))?,
                "channels" => src.channels = value.parse().map_err(|_| bad("an integer"))?,
                "separation" => {
                    src.class_separation = value.parse().map_err(|_| bad("a number"))?
                }
                "imbalance" => {
                    src.imbalance_factor = value.parse().map_err(|_| bad("a number"))?
                }
                "val_per_class" => {
                    src.val_per_class = value.parse().map_err(|_| bad("an integer"))?
                }
                "seed" => src.seed = value.parse().map_err(|_| bad("an integer"))?,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown dataset key {other:?}; expected classes, per_class, width, \
                         height, channels, separation, imbalance, val_per_class, or seed"
                    )))
                }
            }
        }
        Ok(src)
    }

    pub fn materialize(&self) -> Result<(Dataset, Dataset)> {
        let spec = SyntheticSpec {
            num_classes: self.num_classes,
            per_class: self.per_class,
            width: self.width,
            height: self.height,
            channels: self.channels,
            class_separation: self.class_separation,
            seed: self.seed,
        };
        let source = make_synthetic_source(&spec)?;
        let train_split = build_longtailed(&source, self.imbalance_factor, self.seed)?;
        let val_split = make_synthetic_val(&spec, self.val_per_class)?;
        Ok((train_split, val_split))
    }
}

/// Where a training run gets its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSource),
    /// On-disk splits. When `imbalance_factor` is set, `train` is treated as a
    /// balanced source and subsampled to the exponential long-tail profile.
    Files {
        train: PathBuf,
        val: PathBuf,
        #[serde(default)]
        imbalance_factor: Option<f64>,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSource::Synthetic(src) => src.materialize(),
            DatasetSource::Files { train, val, imbalance_factor, seed } => {
                let mut train_split = Dataset::read_file(train)?;
                if let Some(factor) = imbalance_factor {
                    train_split = build_longtailed(&train_split, *factor, *seed)?;
                }
                Ok((train_split, Dataset::read_file(val)?))
            }
        }
    }
}

// ── Manifests ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// Version of the code that produced the run.
    #[serde(default)]
    pub crate_version: String,
    pub command: String,
    pub request: serde_json::Value,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_manifest(out_dir: &Path, command: &str, request: &impl Serialize) -> Result<()> {
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        request: serde_json::to_value(request)?,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::InvalidFormat(format!(
            "manifest version {} unsupported (expected {MANIFEST_VERSION})",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Replay a manifest into a fresh directory. Outputs are byte-identical to the
/// original run's.
pub fn run_manifest(manifest: &Manifest, out_dir: &Path) -> Result<()> {
    match manifest.command.as_str() {
        "make-dataset" => {
            let req: MakeDatasetRequest = serde_json::from_value(manifest.request.clone())?;
            run_make_dataset(&req, out_dir)
        }
        "train" => {
            let req: TrainRequest = serde_json::from_value(manifest.request.clone())?;
            run_train(&req, out_dir).map(|_| ())
        }
        "evaluate" => {
            let req: EvaluateRequest = serde_json::from_value(manifest.request.clone())?;
            run_evaluate(&req, out_dir).map(|_| ())
        }
        "grid" => {
            let req: GridRequest = serde_json::from_value(manifest.request.clone())?;
            let summary = run_grid(&req, out_dir)?;
            if summary.failed > 0 {
                return Err(Error::Experiment(format!(
                    "{} of {} grid cells failed",
                    summary.failed, summary.cells
                )));
            }
            Ok(())
        }
        other => Err(Error::InvalidFormat(format!("unknown manifest command {other:?}"))),
    }
}

// ── Shared output helpers ─────────────────────────────────────────────────

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug, Serialize, Deserialize)]
struct CensusFile {
    counts: Vec<usize>,
    total: usize,
    imbalance_factor: f64,
}

fn write_census(path: &Path, census: &ClassCensus) -> Result<()> {
    write_json(
        path,
        &CensusFile {
            counts: census.counts().to_vec(),
            total: census.total(),
            imbalance_factor: census.imbalance_factor(),
        },
    )
}

fn read_census(path: &Path) -> Result<ClassCensus> {
    let text = fs::read_to_string(path)?;
    let file: CensusFile = serde_json::from_str(&text)?;
    ClassCensus::new(file.counts)
}

fn metrics_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(
        "epoch,train_loss_con,train_loss_ce,val_top1,many_acc,medium_acc,few_acc,ece,gamma_mean\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.train_loss_con,
            r.train_loss_ce,
            r.val_top1,
            fmt_opt(r.many_acc),
            fmt_opt(r.medium_acc),
            fmt_opt(r.few_acc),
            r.ece,
            r.gamma_mean
        ));
    }
    out
}

fn confusion_csv(matrix: &[usize], num_classes: usize) -> String {
    let mut out = String::from("true_class");
    for c in 0..num_classes {
        out.push_str(&format!(",pred_{c}"));
    }
    out.push('\n');
    for row in 0..num_classes {
        out.push_str(&row.to_string());
        for col in 0..num_classes {
            out.push_str(&format!(",{}", matrix[row * num_classes + col]));
        }
        out.push('\n');
    }
    out
}

fn reliability_csv(cal: &CalibrationReport) -> String {
    let mut out = String::from("bin_lo,bin_hi,count,accuracy,confidence\n");
    for b in &cal.bins {
        out.push_str(&format!("{},{},{},{},{}\n", b.lo, b.hi, b.count, b.accuracy, b.confidence));
    }
    out
}

// ── make-dataset ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MakeDatasetRequest {
    pub synthetic: SyntheticSource,
}

/// Writes `train.ltds`, `val.ltds`, `census.json`, and `manifest.json`.
pub fn run_make_dataset(req: &MakeDatasetRequest, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let (train_split, val_split) = req.synthetic.materialize()?;
    train_split.write_file(&out_dir.join("train.ltds"))?;
    val_split.write_file(&out_dir.join("val.ltds"))?;
    write_census(&out_dir.join("census.json"), &train_split.census()?)?;
    write_manifest(out_dir, "make-dataset", req)
}

// ── train ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRequest {
    pub dataset: DatasetSource,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub resolved_topk: usize,
    pub resolved_omega: f64,
    pub resolved_warmup: usize,
    pub train_sha256: String,
    pub val_sha256: String,
    pub last_epoch: Option<EpochRecord>,
}

/// Write the artifacts every training run produces, direct or as a grid cell:
/// `metrics.csv` and `summary.json`. A one-cell grid therefore yields files
/// byte-identical to a direct run with the same config and data.
fn write_train_artifacts(
    dir: &Path,
    config: &TrainConfig,
    records: &[EpochRecord],
    num_classes: usize,
    train_sha256: &str,
    val_sha256: &str,
) -> Result<TrainSummary> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(records))?;
    let summary = TrainSummary {
        epochs: config.epochs,
        resolved_topk: config.resolved_topk(num_classes),
        resolved_omega: config.resolved_omega(num_classes),
        resolved_warmup: config.resolved_warmup(),
        train_sha256: train_sha256.to_string(),
        val_sha256: val_sha256.to_string(),
        last_epoch: records.last().cloned(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Writes `metrics.csv`, `summary.json`, `census.json`, `model.ccmx`, and
/// `manifest.json`.
pub fn run_train(req: &TrainRequest, out_dir: &Path) -> Result<TrainSummary> {
    fs::create_dir_all(out_dir)?;
    let (train_split, val_split) = req.dataset.load()?;
    let output = train(&req.config, &train_split, &val_split)?;

    save_checkpoint(&output.model, &output.head, &out_dir.join("model.ccmx"))?;
    write_census(&out_dir.join("census.json"), &output.census)?;
    let summary = write_train_artifacts(
        out_dir,
        &req.config,
        &output.records,
        train_split.num_classes(),
        &train_split.sha256_hex(),
        &val_split.sha256_hex(),
    )?;
    write_manifest(out_dir, "train", req)?;
    Ok(summary)
}

/// Apply `key=value` overrides to a config. Keys use dots for nesting
/// (`group_spec.many_threshold=50`); values are parsed as JSON with a plain-string
/// fallback, so `metric=cosine` and `omega=0.5` both work.
pub fn apply_overrides(config: &TrainConfig, overrides: &[String]) -> Result<TrainConfig> {
    let mut value = serde_json::to_value(config)?;
    for entry in overrides {
        let (path, raw) = entry.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("override {entry:?} is not key=value"))
        })?;
        let raw = raw.trim();
        let leaf: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let segments: Vec<&str> = path.trim().split('.').collect();
        let mut parent = &mut value;
        for segment in &segments[..segments.len() - 1] {
            parent = parent.get_mut(*segment).ok_or_else(|| {
                Error::InvalidConfig(format!("unknown config section {segment:?}"))
            })?;
        }
        let leaf_key = *segments.last().expect("split yields at least one segment");
        let serde_json::Value::Object(object) = parent else {
            return Err(Error::InvalidConfig(format!(
                "{} is not a nested config section",
                path.trim()
            )));
        };
        if !object.contains_key(leaf_key) {
            return Err(Error::InvalidConfig(format!("unknown config field {:?}", path.trim())));
        }
        object.insert(leaf_key.to_string(), leaf);
    }
    let config: TrainConfig = serde_json::from_value(value)
        .map_err(|e| Error::InvalidConfig(format!("override produced invalid config: {e}")))?;
    config.validate()?;
    Ok(config)
}

// ── evaluate ──────────────────────────────────────────────────────────────

fn default_ece_bins() -> usize {
    15
}

fn default_eval_batch() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub census: PathBuf,
    #[serde(default)]
    pub group_spec: GroupSpec,
    #[serde(default = "default_ece_bins")]
    pub ece_bins: usize,
    #[serde(default = "default_eval_batch")]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub top1: f64,
    pub macro_acc: f64,
    pub many_acc: Option<f64>,
    pub medium_acc: Option<f64>,
    pub few_acc: Option<f64>,
    pub ece: f64,
    pub samples: usize,
    pub checkpoint_sha256: String,
    pub data_sha256: String,
}

/// Writes `confusion.csv`, `reliability.csv`, `summary.json`, and `manifest.json`.
pub fn run_evaluate(req: &EvaluateRequest, out_dir: &Path) -> Result<EvalSummary> {
    fs::create_dir_all(out_dir)?;
    let (model, head) = load_checkpoint(&req.checkpoint)?;
    let data = Dataset::read_file(&req.data)?;
    let census = read_census(&req.census)?;
    if census.num_classes() != data.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "census covers {} classes, dataset {}",
            census.num_classes(),
            data.num_classes()
        )));
    }

    let (report, cal) =
        evaluate_model(&model, &head, &data, &census, &req.group_spec, req.ece_bins, req.batch_size)?;

    // Re-run the predictions for the confusion matrix; classification is
    // deterministic, so this matches the report exactly.
    let mut predictions = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(req.batch_size.max(1)) {
        let images: Vec<&crate::image::Image> = chunk.iter().map(|&i| data.image(i)).collect();
        for pred in crate::trainer::classify(&model, &head, &images)? {
            predictions.push(pred.class);
        }
    }
    let matrix = confusion_matrix(&predictions, data.labels(), data.num_classes())?;

    fs::write(out_dir.join("confusion.csv"), confusion_csv(&matrix, data.num_classes()))?;
    fs::write(out_dir.join("reliability.csv"), reliability_csv(&cal))?;
    let summary = EvalSummary {
        top1: report.top1,
        macro_acc: report.macro_acc,
        many_acc: report.many_acc,
        medium_acc: report.medium_acc,
        few_acc: report.few_acc,
        ece: cal.ece,
        samples: data.len(),
        checkpoint_sha256: sha256_hex(&fs::read(&req.checkpoint)?),
        data_sha256: data.sha256_hex(),
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    write_manifest(out_dir, "evaluate", req)?;
    Ok(summary)
}

// ── grid ──────────────────────────────────────────────────────────────────

fn default_max_cells() -> usize {
    64
}

fn default_grid_name() -> String {
    "grid".to_string()
}

/// A cartesian sweep over rectification knobs on one shared dataset (so cells are
/// paired: method deltas are never confounded by data draws). Empty axes fall back
/// to the base config's value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRequest {
    #[serde(default = "default_grid_name")]
    pub name: String,
    pub dataset: DatasetSource,
    pub config: TrainConfig,
    #[serde(default)]
    pub topk: Vec<usize>,
    #[serde(default)]
    pub omega: Vec<f64>,
    #[serde(default)]
    pub activation: Vec<CountActivation>,
    #[serde(default)]
    pub metric: Vec<SimilarityMetric>,
    #[serde(default)]
    pub fg_sampler: Vec<SamplerKind>,
    #[serde(default)]
    pub bg_sampler: Vec<SamplerKind>,
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
}

#[derive(Debug, Clone)]
struct GridCell {
    index: usize,
    config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct GridSummary {
    pub cells: usize,
    pub failed: usize,
}

fn grid_cells(req: &GridRequest) -> Result<Vec<GridCell>> {
    let topk: Vec<Option<usize>> = if req.topk.is_empty() {
        vec![req.config.topk]
    } else {
        req.topk.iter().map(|&k| Some(k)).collect()
    };
    let omega: Vec<Option<f64>> = if req.omega.is_empty() {
        vec![req.config.omega]
    } else {
        req.omega.iter().map(|&w| Some(w)).collect()
    };
    let activation = if req.activation.is_empty() {
        vec![req.config.activation]
    } else {
        req.activation.clone()
    };
    let metric =
        if req.metric.is_empty() { vec![req.config.metric] } else { req.metric.clone() };
    let fg = if req.fg_sampler.is_empty() {
        vec![req.config.fg_sampler]
    } else {
        req.fg_sampler.clone()
    };
    let bg = if req.bg_sampler.is_empty() {
        vec![req.config.bg_sampler]
    } else {
        req.bg_sampler.clone()
    };

    let total = topk.len() * omega.len() * activation.len() * metric.len() * fg.len() * bg.len();
    if total == 0 {
        return Err(Error::Experiment("grid has no cells".into()));
    }
    if total > req.max_cells {
        return Err(Error::Experiment(format!(
            "grid has {total} cells, exceeding the cap of {} (raise max_cells to allow)",
            req.max_cells
        )));
    }

    let mut cells = Vec::with_capacity(total);
    for &k in &topk {
        for &w in &omega {
            for &act in &activation {
                for &met in &metric {
                    for &f in &fg {
                        for &b in &bg {
                            let mut config = req.config.clone();
                            config.topk = k;
                            config.omega = w;
                            config.activation = act;
                            config.metric = met;
                            config.fg_sampler = f;
                            config.bg_sampler = b;
                            cells.push(GridCell { index: cells.len(), config });
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

fn grid_threads(cells: usize) -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4);
    let requested = std::env::var("CCMX_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(available);
    requested.min(cells).max(1)
}

fn cell_dir_name(index: usize) -> String {
    format!("cell_{index:03}")
}

/// Final epoch record on success, error text on failure.
type CellOutcome = std::result::Result<Option<EpochRecord>, String>;

/// Writes one subdirectory per cell (`cell_000/metrics.csv`, `cell_000/summary.json`),
/// a top-level `grid.csv` comparing cells, and `manifest.json`. Cell failures are
/// recorded in the CSV and counted in the summary instead of aborting the sweep.
/// Cells run in parallel, capped by the `CCMX_THREADS` env var; each writes only
/// its own subdirectory.
pub fn run_grid(req: &GridRequest, out_dir: &Path) -> Result<GridSummary> {
    fs::create_dir_all(out_dir)?;
    let cells = grid_cells(req)?;
    let (train_split, val_split) = req.dataset.load()?;
    let dataset_sha = train_split.sha256_hex();
    let val_sha = val_split.sha256_hex();
    let num_classes = train_split.num_classes();

    let results: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; cells.len()]);
    let threads = grid_threads(cells.len());

    std::thread::scope(|scope| {
        for worker in 0..threads {
            let cells = &cells;
            let results = &results;
            let train_split = &train_split;
            let val_split = &val_split;
            let dataset_sha = &dataset_sha;
            let val_sha = &val_sha;
            scope.spawn(move || {
                for cell in cells.iter().skip(worker).step_by(threads) {
                    let outcome = train(&cell.config, train_split, val_split)
                        .map_err(|e| e.to_string())
                        .and_then(|out| {
                            write_train_artifacts(
                                &out_dir.join(cell_dir_name(cell.index)),
                                &cell.config,
                                &out.records,
                                num_classes,
                                dataset_sha,
                                val_sha,
                            )
                            .map_err(|e| e.to_string())?;
                            Ok(out.records.last().cloned())
                        });
                    results.lock().expect("no panics while holding the lock")[cell.index] =
                        Some(outcome);
                }
            });
        }
    });

    let results = results.into_inner().expect("all workers joined");
    let mut csv = String::from(
        "cell,topk,omega,activation,metric,fg_sampler,bg_sampler,status,val_top1,many_acc,\
         medium_acc,few_acc,ece,gamma_mean,dataset_sha256\n",
    );
    let mut failed = 0usize;
    for cell in &cells {
        let outcome = results[cell.index].as_ref().expect("every cell was scheduled");
        let (status, record) = match outcome {
            Ok(record) => ("ok".to_string(), record.clone()),
            Err(message) => {
                failed += 1;
                (format!("error: {}", message.replace([',', '\n'], ";")), None)
            }
        };
        let c = &cell.config;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            cell.index,
            c.topk.map(|k| k.to_string()).unwrap_or_default(),
            c.omega.map(|w| w.to_string()).unwrap_or_default(),
            c.activation.name(),
            c.metric.name(),
            c.fg_sampler.name(),
            c.bg_sampler.name(),
            status,
            fmt_opt(record.as_ref().map(|r| r.val_top1)),
            fmt_opt(record.as_ref().and_then(|r| r.many_acc)),
            fmt_opt(record.as_ref().and_then(|r| r.medium_acc)),
            fmt_opt(record.as_ref().and_then(|r| r.few_acc)),
            fmt_opt(record.as_ref().map(|r| r.ece)),
            fmt_opt(record.as_ref().map(|r| r.gamma_mean)),
            dataset_sha,
        ));
    }
    fs::write(out_dir.join("grid.csv"), csv)?;
    write_manifest(out_dir, "grid", req)?;
    Ok(GridSummary { cells: cells.len(), failed })
}
