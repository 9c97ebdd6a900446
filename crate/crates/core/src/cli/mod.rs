//! Command-line front end. Each `cmd_*` function is usable as a library
//! call; [`run`] maps parsed arguments onto them.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::*;
pub use config::{config_diff, CompareSection, EvalSection, RoiPoolSection, RunConfig};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "mlbvae", version, about = "Multi-view multi-label decoding pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every configurable command.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON config file; unknown keys are rejected.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config entry by dotted key, e.g. `train.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to a directory under $MLBVAE_RUN_ROOT.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pool voxel activity into ROI features and write a dataset.
    Preprocess {
        /// f32 activity matrix [N × n_voxels], columns by voxel id.
        #[arg(long)]
        voxels: PathBuf,
        /// CSV ROI table: voxel_id,roi_id,hemisphere,x,y,z.
        #[arg(long)]
        rois: PathBuf,
        /// u8 label matrix [N × C].
        #[arg(long, conflicts_with = "ratings", required_unless_present = "ratings")]
        labels: Option<PathBuf>,
        /// f32 ratings [N × C] in [0, 1], binarized with --threshold.
        #[arg(long, requires = "threshold")]
        ratings: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        n_roif: Option<usize>,
        /// Comma-separated label names.
        #[arg(long, value_delimiter = ',')]
        label_names: Option<Vec<String>>,
        /// Also store the unpooled voxels (needed by the no_roip variant).
        #[arg(long)]
        keep_raw: bool,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Generate a synthetic dataset.
    Synthesize {
        /// Emit voxel-level inputs for `preprocess` with this many ROIs per
        /// hemisphere instead of a pooled dataset.
        #[arg(long, value_name = "N")]
        voxel_rois: Option<usize>,
        /// Side length in voxels of each synthetic ROI cube.
        #[arg(long, default_value_t = 4)]
        roi_side: u32,
        /// Also write the generator's ground truth.
        #[arg(long)]
        truth: bool,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Train a model and write a checkpoint plus training log.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Sets lambda1 to this value and lambda2 to 1.
        #[arg(long)]
        lambda_ratio: Option<f64>,
        /// Ablation to apply (repeatable).
        #[arg(long)]
        variant: Vec<String>,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Write label probabilities for a split of a dataset.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = RowSelect::Test)]
        rows: RowSelect,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Compute all six metrics plus per-label AP.
    Evaluate {
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Directory written by `infer` (scores.f32 + predictions.json).
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = RowSelect::Test)]
        rows: RowSelect,
        /// F1 decision threshold.
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Train and evaluate several variants with shared seed and split.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// `full` or an ablation name (repeatable); all when omitted.
        #[arg(long)]
        variant: Vec<String>,
        #[arg(long)]
        lambda_ratio: Option<f64>,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Friedman test and Bonferroni-Dunn critical difference.
    Compare {
        /// Scores table: header of algorithm names, one row per subject.
        #[arg(long)]
        scores: PathBuf,
        /// Control algorithm; the first column when omitted.
        #[arg(long)]
        control: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        q_alpha: Option<f64>,
        /// Smaller scores are better (e.g. one-error, ranking loss).
        #[arg(long)]
        lower_is_better: bool,
        #[command(flatten)]
        common: ConfigArgs,
    },
}

/// Config file, then `--set` overrides; command flags are applied by the
/// caller before validation.
fn base_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &args.set {
        cfg.set(s)?;
    }
    Ok(cfg)
}

fn apply_lambda_ratio(cfg: &mut RunConfig, ratio: Option<f64>) -> Result<()> {
    if let Some(r) = ratio {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::Config(format!("--lambda-ratio must be non-negative, got {r}")));
        }
        cfg.train.lambda1 = r;
        cfg.train.lambda2 = 1.0;
    }
    Ok(())
}

fn apply_variants(cfg: &mut RunConfig, variants: &[String]) -> Result<()> {
    for v in variants {
        *cfg = variant_config(cfg, v)?;
    }
    Ok(())
}

fn out_dir(args: &ConfigArgs, name: &str, seed: u64) -> PathBuf {
    args.out.clone().unwrap_or_else(|| default_run_dir(&format!("{name}-seed{seed}")))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess {
            voxels,
            rois,
            labels,
            ratings,
            threshold,
            n_roif,
            label_names,
            keep_raw,
            common,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(n) = n_roif {
                cfg.roipool.n_roif = n;
            }
            cfg.validate()?;
            let labels = match (labels, ratings, threshold) {
                (Some(p), None, _) => LabelSource::Binary(p),
                (None, Some(path), Some(threshold)) => LabelSource::Ratings { path, threshold },
                _ => return Err(Error::Config("give --labels, or --ratings with --threshold".into())),
            };
            let out = out_dir(&common, "preprocess", 0);
            let inputs = PreprocessInputs {
                voxels,
                rois,
                labels,
                label_names,
                keep_raw,
            };
            let ds = cmd_preprocess(&inputs, cfg.roipool.n_roif, &out, common.overwrite)?;
            println!(
                "wrote {} samples × {} features per hemisphere, {} labels to {}",
                ds.n_samples(),
                ds.width(),
                ds.n_labels(),
                out.display()
            );
        }
        Command::Synthesize {
            voxel_rois,
            roi_side,
            truth,
            common,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(s) = common.seed {
                cfg.synthetic.seed = s;
            }
            cfg.validate()?;
            let out = out_dir(&common, "synth", cfg.synthetic.seed);
            let voxels = voxel_rois.map(|n| VoxelOptions {
                rois_per_hemisphere: n,
                roi_side,
            });
            cmd_synthesize(&cfg.synthetic, voxels, truth, &out, common.overwrite)?;
            println!("wrote synthetic data to {}", out.display());
        }
        Command::Train {
            data,
            lambda_ratio,
            variant,
            common,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            apply_lambda_ratio(&mut cfg, lambda_ratio)?;
            apply_variants(&mut cfg, &variant)?;
            cfg.validate()?;
            let out = out_dir(&common, "train", cfg.train.seed);
            let run = cmd_train(&data, &cfg, &out, common.overwrite)?;
            println!(
                "trained {} epochs; checkpoint {}",
                run.history.len(),
                out.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Infer {
            checkpoint,
            data,
            rows,
            out,
            overwrite,
        } => {
            let out = out.unwrap_or_else(|| default_run_dir("infer"));
            let p = cmd_infer(&checkpoint, &data, rows, &out, overwrite)?;
            println!("wrote {} × {} scores to {}", p.rows.len(), p.n_labels, out.display());
        }
        Command::Evaluate {
            checkpoint,
            predictions,
            data,
            rows,
            threshold,
            common,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(t) = threshold {
                cfg.eval.threshold = t;
            }
            cfg.validate()?;
            let source = match (checkpoint, predictions) {
                (Some(c), None) => EvalSource::Checkpoint(c),
                (None, Some(p)) => EvalSource::Predictions(p),
                _ => return Err(Error::Config("give exactly one of --checkpoint or --predictions".into())),
            };
            let out = common.out.clone().unwrap_or_else(|| default_run_dir("evaluate"));
            let ev = cmd_evaluate(&source, &data, rows, cfg.eval.threshold, &out, common.overwrite)?;
            println!("{}", serde_json::to_string_pretty(&ev.metrics).expect("report serializes"));
        }
        Command::Ablate {
            data,
            variant,
            lambda_ratio,
            common,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            apply_lambda_ratio(&mut cfg, lambda_ratio)?;
            cfg.validate()?;
            let out = out_dir(&common, "ablate", cfg.train.seed);
            let table = cmd_ablate(&data, &cfg, &variant, &out, common.overwrite)?;
            print!("{}", table.to_tsv());
        }
        Command::Compare {
            scores,
            control,
            alpha,
            q_alpha,
            lower_is_better,
            common,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(a) = alpha {
                cfg.compare.alpha = a;
            }
            if q_alpha.is_some() {
                cfg.compare.q_alpha = q_alpha;
            }
            if lower_is_better {
                cfg.compare.higher_is_better = false;
            }
            cfg.validate()?;
            let out = common.out.clone().unwrap_or_else(|| default_run_dir("compare"));
            let report = cmd_compare(&scores, control.as_deref(), &cfg.compare, &out, common.overwrite)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "chi2_F={:.4} F_F={} CD={:.4} written to {}",
                report.friedman.chi2_f,
                if report.friedman.f_infinite { "inf".to_string() } else { format!("{:.4}", report.friedman.f_f) },
                report.cd,
                out.display()
            );
        }
    }
    Ok(())
}
