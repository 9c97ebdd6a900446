use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{config_diff, CompareSection, RunConfig};
use crate::checkpoint::Checkpoint;
use crate::dataio::{
    read_f32_le, read_u8, threshold_ratings, write_f32_le, write_u8, Dataset, DatasetMeta, Provenance, RawViews,
    Split, Standardizer, SyntheticSpec, FORMAT_VERSION,
};
use crate::emohead::build_mask;
use crate::error::{Error, Result};
use crate::mlmetrics::{EvalBatch, MetricsReport};
use crate::objective::{init_model, train, Ablation, EpochLog, ModelSpec, TrainData};
use crate::rankstats::{compare, ComparisonReport, ScoresTable};
use crate::roipool::{Hemisphere, RoiPoolConfig, RoiPooler, RoiTable};

/// Environment variable naming the directory that default run
/// directories are created under.
pub const RUN_ROOT_ENV: &str = "MLBVAE_RUN_ROOT";

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LAST_GOOD_FILE: &str = "checkpoint.last_good.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "train.log";
pub const MASK_FILE: &str = "mask.txt";
pub const SPLIT_FILE: &str = "split.json";
pub const SCORES_FILE: &str = "scores.f32";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const BASELINE_FILE: &str = "baseline.json";

/// `$MLBVAE_RUN_ROOT/<name>` or `runs/<name>`.
pub fn default_run_dir(name: &str) -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
        .join(name)
}

/// Creates `dir`, refusing to reuse a non-empty one unless `overwrite`.
pub fn prepare_run_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !overwrite {
            return Err(Error::Config(format!(
                "{} is not empty; pass --overwrite to write into it",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("report serializes") + "\n"))
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

// ---------------------------------------------------------------- preprocess

pub enum LabelSource {
    /// `u8` matrix `[N×C]` of 0/1.
    Binary(PathBuf),
    /// `f32` ratings `[N×C]` in `[0, 1]`, binarized at `threshold`.
    Ratings { path: PathBuf, threshold: f64 },
}

pub struct PreprocessInputs {
    /// `f32` activity matrix `[N × n_voxels]`, columns by voxel id.
    pub voxels: PathBuf,
    pub rois: PathBuf,
    pub labels: LabelSource,
    pub label_names: Option<Vec<String>>,
    /// Also store the unpooled voxels for the `no_roip` variant.
    pub keep_raw: bool,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn rows_of(len: usize, n: usize, path: &Path, what: &str) -> Result<usize> {
    if n == 0 || !len.is_multiple_of(n) || len == 0 {
        return Err(Error::data(path, format!("{len} {what} values do not split into {n} samples")));
    }
    Ok(len / n)
}

pub fn cmd_preprocess(inputs: &PreprocessInputs, n_roif: usize, out: &Path, overwrite: bool) -> Result<Dataset> {
    let cfg = RoiPoolConfig::new(n_roif)?;
    let table_bytes = std::fs::read(&inputs.rois).map_err(|e| Error::io(&inputs.rois, e))?;
    let table = RoiTable::read(&inputs.rois)?;
    let n_voxels = table.n_voxels();
    let activity = read_f32_le(&inputs.voxels, None)?;
    if n_voxels == 0 || activity.len() % n_voxels != 0 || activity.is_empty() {
        return Err(Error::data(
            &inputs.voxels,
            format!("{} values are not a whole number of {n_voxels}-voxel rows", activity.len()),
        ));
    }
    let n = activity.len() / n_voxels;
    let pooler = |h: Hemisphere| -> Result<RoiPooler> {
        let order = table.atlas_order(h);
        if order.is_empty() {
            return Err(Error::data(&inputs.rois, format!("no {h:?} hemisphere voxels")));
        }
        RoiPooler::new(&table, h, &order, cfg).map_err(|e| Error::data(&inputs.rois, e.to_string()))
    };
    let (pl, pr) = (pooler(Hemisphere::Left)?, pooler(Hemisphere::Right)?);
    if pl.out_dim() != pr.out_dim() {
        return Err(Error::data(
            &inputs.rois,
            format!(
                "hemispheres pool to different widths ({} vs {}); they need the same ROI count",
                pl.out_dim(),
                pr.out_dim()
            ),
        ));
    }
    let raw_dim = pl.raw_dim().max(pr.raw_dim());
    let mut left = Vec::with_capacity(n * pl.out_dim());
    let mut right = Vec::with_capacity(n * pr.out_dim());
    let mut raw = inputs.keep_raw.then(|| RawViews {
        dim: raw_dim,
        left: Vec::with_capacity(n * raw_dim),
        right: Vec::with_capacity(n * raw_dim),
    });
    for row in activity.chunks_exact(n_voxels) {
        left.extend(pl.pool(row).into_iter().map(|v| v as f32));
        right.extend(pr.pool(row).into_iter().map(|v| v as f32));
        if let Some(r) = raw.as_mut() {
            // The narrower hemisphere is zero-padded to the common width.
            for (dst, p) in [(&mut r.left, &pl), (&mut r.right, &pr)] {
                let vals = p.raw(row);
                let pad = raw_dim - vals.len();
                dst.extend(vals.into_iter().map(|v| v as f32));
                dst.extend(std::iter::repeat_n(0.0, pad));
            }
        }
    }
    let (labels, ratings, threshold) = match &inputs.labels {
        LabelSource::Binary(path) => {
            let len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len() as usize;
            rows_of(len, n, path, "label")?;
            (read_u8(path, len)?, None, None)
        }
        LabelSource::Ratings { path, threshold } => {
            let r = read_f32_le(path, None)?;
            rows_of(r.len(), n, path, "rating")?;
            let y = threshold_ratings(&r, *threshold).map_err(|e| match e {
                Error::Input(d) => Error::data(path, d),
                other => other,
            })?;
            (y, Some(r), Some(*threshold))
        }
    };
    let c = labels.len() / n;
    let label_names = match &inputs.label_names {
        Some(names) if names.len() != c => {
            return Err(Error::Config(format!("{} label names given for {c} labels", names.len())))
        }
        Some(names) => names.clone(),
        None => (0..c).map(|j| format!("label{j:02}")).collect(),
    };
    let ds = Dataset {
        meta: DatasetMeta {
            format_version: FORMAT_VERSION,
            n_samples: n,
            d_left: pl.out_dim(),
            d_right: pr.out_dim(),
            n_labels: c,
            label_names,
            threshold,
            provenance: Provenance::PooledReal,
            n_roif: Some(n_roif),
            atlas_hash: Some(sha256_hex(&table_bytes)),
            has_ratings: ratings.is_some(),
            raw_dim: raw.as_ref().map(|r| r.dim),
            synthetic: None,
        },
        left,
        right,
        labels,
        ratings,
        raw,
    };
    ds.validate()?;
    prepare_run_dir(out, overwrite)?;
    ds.write(out)?;
    Ok(ds)
}

// ---------------------------------------------------------------- synthesize

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoxelOptions {
    pub rois_per_hemisphere: usize,
    pub roi_side: u32,
}

pub const VOXEL_ACTIVITY_FILE: &str = "activity.f32";
pub const VOXEL_ROIS_FILE: &str = "rois.csv";
pub const VOXEL_LABELS_FILE: &str = "labels.u8";

/// Writes a pooled-format dataset, or with `voxels` the raw inputs of
/// `preprocess` (activity, ROI table, labels).
pub fn cmd_synthesize(
    spec: &SyntheticSpec,
    voxels: Option<VoxelOptions>,
    with_truth: bool,
    out: &Path,
    overwrite: bool,
) -> Result<()> {
    spec.validate()?;
    let truth = match voxels {
        None => {
            let (ds, truth) = crate::dataio::generate_synthetic(spec)?;
            prepare_run_dir(out, overwrite)?;
            ds.write(out)?;
            truth
        }
        Some(v) => {
            let vs = crate::dataio::generate_synthetic_voxels(spec, v.rois_per_hemisphere, v.roi_side)?;
            prepare_run_dir(out, overwrite)?;
            write_f32_le(&out.join(VOXEL_ACTIVITY_FILE), &vs.activity)?;
            write_text(&out.join(VOXEL_ROIS_FILE), &vs.table.to_text())?;
            write_u8(&out.join(VOXEL_LABELS_FILE), &vs.labels)?;
            write_json(&out.join("synthetic.json"), spec)?;
            vs.truth
        }
    };
    if with_truth {
        write_json(&out.join("ground_truth.json"), &truth)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- train

/// Features a model with `ablations` trains and predicts on.
fn model_features(ds: &Dataset, no_roip: bool) -> Result<Dataset> {
    if no_roip {
        ds.with_raw_features()
    } else {
        Ok(ds.clone())
    }
}

#[derive(Debug)]
pub struct TrainRun {
    /// Final checkpoint, or the last good one when `failure` is set.
    pub checkpoint: Checkpoint<f32>,
    pub history: Vec<EpochLog>,
    pub split: Split,
    pub failure: Option<Error>,
}

/// Trains on the configured split of `ds` without touching the disk.
pub fn train_on_dataset(ds: &Dataset, cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainRun> {
    cfg.validate()?;
    let ablations: BTreeSet<Ablation> = cfg.train.ablation.iter().copied().collect();
    let ds = model_features(ds, ablations.contains(&Ablation::NoRoip))?;
    let split = cfg.data.resolve(ds.n_samples(), cfg.train.seed)?;
    let standardizer = if cfg.data.standardize {
        Some(Standardizer::fit(&ds, &split.train)?)
    } else {
        None
    };
    let mask = build_mask(&ds.label_rows(&split.train))?;
    let data = TrainData {
        views: ds.views::<f32>(&split.train, standardizer.as_ref())?,
        labels: ds.labels_tensor(&split.train),
    };
    let spec = ModelSpec {
        input_dim: ds.width(),
        n_labels: ds.n_labels(),
        bvae: cfg.bvae.clone(),
        head: cfg.head.clone(),
        ablations,
    };
    let params = init_model::<f32>(spec, &cfg.train)?;
    let mask_t = mask.mask.cast();
    let checkpoint = |model, epochs| Checkpoint {
        model,
        train: Some(cfg.train.clone()),
        data: Some(cfg.data.clone()),
        epochs_completed: epochs,
        label_names: ds.meta.label_names.clone(),
        mask: mask.clone(),
        standardizer: standardizer.clone(),
    };
    Ok(match train(params, &cfg.train, &data, &mask_t, &mut on_epoch) {
        Ok((model, history)) => TrainRun {
            checkpoint: checkpoint(model, history.len()),
            history,
            split,
            failure: None,
        },
        Err(f) => {
            let f = *f;
            TrainRun {
                checkpoint: checkpoint(f.last_good, f.history.len()),
                history: f.history,
                split,
                failure: Some(f.error),
            }
        }
    })
}

#[derive(Serialize, Deserialize)]
struct SplitRecord {
    seed: u64,
    n_train: usize,
    n_test: usize,
    test: Vec<usize>,
}

/// Trains into a run directory: effective config, log, mask, split and
/// checkpoint. A numeric failure leaves the last good checkpoint and
/// returns the error.
pub fn train_into_dir(ds: &Dataset, cfg: &RunConfig, out: &Path, overwrite: bool, echo: bool) -> Result<TrainRun> {
    cfg.validate()?;
    prepare_run_dir(out, overwrite)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_json())?;
    let log_path = out.join(LOG_FILE);
    let mut log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log_err = None;
    let mut line = |text: &str| {
        if let Err(e) = writeln!(log, "{text}").and_then(|_| log.flush()) {
            log_err.get_or_insert(Error::io(&log_path, e));
        }
        if echo {
            eprintln!("{text}");
        }
    };
    line(&format!("started_unix={}", unix_now()));
    let run = train_on_dataset(ds, cfg, |e| line(&e.to_line()))?;
    match &run.failure {
        None => line(&format!("finished_unix={} epochs={}", unix_now(), run.history.len())),
        Some(e) => line(&format!("aborted_unix={} epochs={} error={e}", unix_now(), run.history.len())),
    }
    if let Some(e) = log_err {
        return Err(e);
    }
    write_text(&out.join(MASK_FILE), &run.checkpoint.mask.to_text())?;
    write_json(
        &out.join(SPLIT_FILE),
        &SplitRecord {
            seed: cfg.train.seed,
            n_train: run.split.train.len(),
            n_test: run.split.test.len(),
            test: run.split.test.clone(),
        },
    )?;
    match &run.failure {
        None => run.checkpoint.write(&out.join(CHECKPOINT_FILE))?,
        Some(e) => {
            run.checkpoint.write(&out.join(LAST_GOOD_FILE))?;
            return Err(Error::Numeric(format!(
                "training aborted after {} epochs ({e}); last good checkpoint in {}",
                run.history.len(),
                out.join(LAST_GOOD_FILE).display()
            )));
        }
    }
    Ok(run)
}

pub fn cmd_train(data_dir: &Path, cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<TrainRun> {
    let ds = Dataset::read(data_dir)?;
    train_into_dir(&ds, cfg, out, overwrite, true)
}

// ---------------------------------------------------------------- infer

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RowSelect {
    /// Held-out fold of the checkpoint's split.
    #[default]
    Test,
    Train,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub rows: Vec<usize>,
    pub n_labels: usize,
    pub label_names: Vec<String>,
    /// `[rows × n_labels]` probabilities; stored on disk as `f32`.
    #[serde(skip)]
    pub scores: Vec<f64>,
}

impl Predictions {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let scores: Vec<f32> = self.scores.iter().map(|&v| v as f32).collect();
        write_f32_le(&dir.join(SCORES_FILE), &scores)?;
        write_json(&dir.join(PREDICTIONS_FILE), self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let mut p: Self = read_json(&dir.join(PREDICTIONS_FILE))?;
        let scores = read_f32_le(&dir.join(SCORES_FILE), Some(p.rows.len() * p.n_labels))?;
        p.scores = scores.into_iter().map(f64::from).collect();
        Ok(p)
    }
}

/// Rows of `ds` selected under the checkpoint's split.
pub fn checkpoint_rows(ck: &Checkpoint<f32>, n: usize, select: RowSelect) -> Result<Split> {
    if select == RowSelect::All {
        return Ok(Split {
            train: Vec::new(),
            test: (0..n).collect(),
        });
    }
    let (Some(data), Some(train)) = (&ck.data, &ck.train) else {
        return Err(Error::Config("checkpoint carries no split; use --rows all".into()));
    };
    data.resolve(n, train.seed)
}

/// Label probabilities of the checkpoint's model on `rows`.
pub fn predict(ck: &Checkpoint<f32>, ds: &Dataset, rows: &[usize]) -> Result<Predictions> {
    let spec = &ck.model.spec;
    let ds = model_features(ds, spec.has(Ablation::NoRoip))?;
    if ds.width() != spec.input_dim || ds.n_labels() != spec.n_labels {
        return Err(Error::dim(
            "dataset vs checkpoint (features, labels)",
            &[spec.input_dim, spec.n_labels],
            &[ds.width(), ds.n_labels()],
        ));
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= ds.n_samples()) {
        return Err(Error::Input(format!("row {bad} out of range for {} samples", ds.n_samples())));
    }
    let mask = ck.mask_tensor();
    let mut scores = Vec::with_capacity(rows.len() * spec.n_labels);
    for chunk in rows.chunks(256) {
        let views = ds.views::<f32>(chunk, ck.standardizer.as_ref())?;
        let p = ck.model.infer(&views, &mask)?;
        scores.extend(p.data().iter().map(|&v| f64::from(v)));
    }
    Ok(Predictions {
        rows: rows.to_vec(),
        n_labels: spec.n_labels,
        label_names: ck.label_names.clone(),
        scores,
    })
}

pub fn cmd_infer(checkpoint: &Path, data_dir: &Path, select: RowSelect, out: &Path, overwrite: bool) -> Result<Predictions> {
    let ck = Checkpoint::<f32>::read(checkpoint)?;
    let ds = Dataset::read(data_dir)?;
    let rows = checkpoint_rows(&ck, ds.n_samples(), select)?;
    let rows = if select == RowSelect::Train { rows.train } else { rows.test };
    let preds = predict(&ck, &ds, &rows)?;
    prepare_run_dir(out, overwrite)?;
    preds.write(out)?;
    Ok(preds)
}

// ---------------------------------------------------------------- evaluate

/// Metrics of `scores` (`[rows × C]`) against the dataset labels of `rows`.
pub fn score_rows(ds: &Dataset, rows: &[usize], scores: Vec<f64>, threshold: f64) -> Result<MetricsReport> {
    let c = ds.n_labels();
    if scores.len() != rows.len() * c {
        return Err(Error::dim("scores", &[rows.len(), c], &[scores.len() / c.max(1), c]));
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= ds.n_samples()) {
        return Err(Error::Input(format!("row {bad} out of range for {} samples", ds.n_samples())));
    }
    let labels = rows.iter().flat_map(|&i| ds.label_row(i).iter().copied()).collect();
    let batch = EvalBatch::new(rows.len(), c, scores, labels)?.with_threshold(threshold)?;
    Ok(MetricsReport::compute(&batch))
}

/// Scores every row with the training label frequencies.
pub fn label_prior_baseline(ds: &Dataset, split: &Split, threshold: f64) -> Result<MetricsReport> {
    let freq = ds.label_frequencies(&split.train);
    let scores = split.test.iter().flat_map(|_| freq.iter().copied()).collect();
    score_rows(ds, &split.test, scores, threshold)
}

pub enum EvalSource {
    Checkpoint(PathBuf),
    /// Output directory of `infer`, or any scores injected in that format.
    Predictions(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    /// Label-prior baseline; known only when the training split is.
    pub baseline: Option<MetricsReport>,
}

pub fn cmd_evaluate(
    source: &EvalSource,
    data_dir: &Path,
    select: RowSelect,
    threshold: f64,
    out: &Path,
    overwrite: bool,
) -> Result<Evaluation> {
    let ds = Dataset::read(data_dir)?;
    let eval = match source {
        EvalSource::Checkpoint(path) => {
            let ck = Checkpoint::<f32>::read(path)?;
            let split = checkpoint_rows(&ck, ds.n_samples(), select)?;
            let rows = if select == RowSelect::Train { &split.train } else { &split.test };
            let preds = predict(&ck, &ds, rows)?;
            let baseline = match select {
                RowSelect::Test => Some(label_prior_baseline(&ds, &split, threshold)?),
                _ => None,
            };
            Evaluation {
                metrics: score_rows(&ds, rows, preds.scores, threshold)?,
                baseline,
            }
        }
        EvalSource::Predictions(dir) => {
            let preds = Predictions::read(dir)?;
            if preds.n_labels != ds.n_labels() {
                return Err(Error::dim("predictions labels", &[ds.n_labels()], &[preds.n_labels]));
            }
            Evaluation {
                metrics: score_rows(&ds, &preds.rows, preds.scores, threshold)?,
                baseline: None,
            }
        }
    };
    prepare_run_dir(out, overwrite)?;
    write_json(&out.join(METRICS_FILE), &eval.metrics)?;
    if let Some(b) = &eval.baseline {
        write_json(&out.join(BASELINE_FILE), b)?;
    }
    Ok(eval)
}

// ---------------------------------------------------------------- ablate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Config keys that differ from the base config.
    pub config_diff: Vec<String>,
    pub epochs: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub label_prior: MetricsReport,
}

impl AblationTable {
    /// Tab-separated table: one row per variant, all six metrics.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("variant");
        for k in MetricsReport::KEYS {
            s.push('\t');
            s.push_str(k);
        }
        s.push('\n');
        let mut row = |name: &str, m: &MetricsReport| {
            s.push_str(name);
            for k in MetricsReport::KEYS {
                match m.get(k) {
                    Some(v) => s.push_str(&format!("\t{v:.6}")),
                    None => s.push_str("\tnull"),
                }
            }
            s.push('\n');
        };
        for r in &self.rows {
            row(&r.variant, &r.metrics);
        }
        row("label_prior", &self.label_prior);
        s
    }
}

/// Config of one ablation variant: `full` or an ablation name added to
/// the base config's ablations.
pub fn variant_config(base: &RunConfig, variant: &str) -> Result<RunConfig> {
    let mut cfg = base.clone();
    if variant != "full" {
        let a = Ablation::parse(variant)?;
        if !cfg.train.ablation.contains(&a) {
            cfg.train.ablation.push(a);
            cfg.train.ablation.sort();
        }
    }
    Ok(cfg)
}

/// Variants run when none are named: `full` and every ablation the
/// dataset supports.
pub fn default_variants(ds: &Dataset) -> Vec<String> {
    std::iter::once("full".to_string())
        .chain(
            Ablation::ALL
                .into_iter()
                .filter(|&a| a != Ablation::NoRoip || ds.raw.is_some())
                .map(|a| a.name().to_string()),
        )
        .collect()
}

pub fn ablate_dataset(
    ds: &Dataset,
    base: &RunConfig,
    variants: &[String],
    out: &Path,
    overwrite: bool,
    echo: bool,
) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::Config("no ablation variants given".into()));
    }
    let mut seen = BTreeSet::new();
    let configs = variants
        .iter()
        .map(|v| {
            if !seen.insert(v.as_str()) {
                return Err(Error::Config(format!("variant {v:?} listed twice")));
            }
            variant_config(base, v)
        })
        .collect::<Result<Vec<_>>>()?;
    prepare_run_dir(out, overwrite)?;
    let threshold = base.eval.threshold;
    let mut rows = Vec::with_capacity(variants.len());
    let mut label_prior = None;
    for (name, cfg) in variants.iter().zip(&configs) {
        if echo {
            eprintln!("variant={name}");
        }
        let run = train_into_dir(ds, cfg, &out.join(name), overwrite, echo)?;
        let preds = predict(&run.checkpoint, ds, &run.split.test)?;
        if label_prior.is_none() {
            label_prior = Some(label_prior_baseline(ds, &run.split, threshold)?);
        }
        rows.push(AblationRow {
            variant: name.clone(),
            config_diff: config_diff(base, cfg),
            epochs: run.history.len(),
            metrics: score_rows(ds, &run.split.test, preds.scores, threshold)?,
        });
    }
    let table = AblationTable {
        rows,
        label_prior: label_prior.expect("at least one variant"),
    };
    write_json(&out.join("ablation.json"), &table)?;
    write_text(&out.join("ablation.tsv"), &table.to_tsv())?;
    Ok(table)
}

pub fn cmd_ablate(data_dir: &Path, base: &RunConfig, variants: &[String], out: &Path, overwrite: bool) -> Result<AblationTable> {
    let ds = Dataset::read(data_dir)?;
    let variants = if variants.is_empty() { default_variants(&ds) } else { variants.to_vec() };
    ablate_dataset(&ds, base, &variants, out, overwrite, true)
}

// ---------------------------------------------------------------- compare

pub fn compare_table(table: &ScoresTable, control: Option<&str>, section: &CompareSection) -> Result<ComparisonReport> {
    if table.algorithms.len() < 2 {
        return Err(Error::Input(format!(
            "comparison needs at least 2 algorithms, got {}",
            table.algorithms.len()
        )));
    }
    let control = match control {
        None => 0,
        Some(name) => table
            .algorithms
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::Config(format!("control {name:?} is not a column of the scores table")))?,
    };
    compare(table, section.higher_is_better, section.alpha, section.q_alpha, control)
}

pub fn cmd_compare(
    scores: &Path,
    control: Option<&str>,
    section: &CompareSection,
    out: &Path,
    overwrite: bool,
) -> Result<ComparisonReport> {
    let text = std::fs::read_to_string(scores).map_err(|e| Error::io(scores, e))?;
    let table = ScoresTable::parse(&text).map_err(|e| match e {
        Error::Input(d) => Error::data(scores, d),
        other => other,
    })?;
    let report = compare_table(&table, control, section)?;
    prepare_run_dir(out, overwrite)?;
    write_json(&out.join("compare.json"), &report)?;
    write_json(&out.join("cd_diagram.json"), &report.diagram)?;
    Ok(report)
}
