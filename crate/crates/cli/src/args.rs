use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "mvlift",
    version,
    about = "Self-supervised multi-view 3D human pose lifting"
)]
pub struct Cli {
    /// Directory that receives every output file.
    #[arg(long, global = true, env = "MVLIFT_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-camera dataset.
    Synth(SynthArgs),
    /// Triangulate multi-view detections and report re-projection errors.
    Triangulate(TriangulateArgs),
    /// Train a lifter on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint against a dataset's ground truth.
    Eval(EvalArgs),
    /// Lift single-view detections to root-relative 3D poses.
    Infer(InferArgs),
    /// Train the five loss configurations and compare held-out P-MPJPE.
    Ablate(AblateArgs),
}

/// Overrides for `SynthConfig`; each flag is the field of the same name.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct SynthFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_cameras: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root_height: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_range: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yaw_range: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ring_radius: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera_height: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height_jitter: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub focal_length: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_height: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixel_noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier_magnitude: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    /// TOML file with `SynthConfig` fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: SynthFlags,
}

#[derive(Debug, Args)]
pub struct TriangulateArgs {
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    /// Poses file name inside the output directory.
    #[arg(long, default_value = "triangulated.txt")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct WeightFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_in: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_proj: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_con: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_out: Option<f64>,
}

/// Overrides for `TrainConfig`; each flag is the field of the same name.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[command(flatten)]
    pub weights: WeightFlags,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_loss_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_scale: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_length_unit: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency_symmetric: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_through_dlt: Option<bool>,
}

#[derive(Debug, Args)]
pub struct ModelSource {
    /// Dataset manifest (`dataset.toml`).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Starting point for the configuration: desk or full.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// TOML file with `TrainConfig` fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Hold out the last N samples for evaluation.
    #[arg(long)]
    pub holdout: Option<usize>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Alignment {
    Root,
    Procrustes,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Score only the last N samples.
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long, default_value_t = mvlift_core::eval::PCK_THRESHOLD)]
    pub pck_threshold: f64,
    /// Alignment used for 3DPCK and AUC.
    #[arg(long, value_enum, default_value = "root")]
    pub alignment: Alignment,
    /// Write SVG renderings for the first N scored samples.
    #[arg(long, default_value_t = 0)]
    pub plots: usize,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("scale").required(true).args(["norm_scale", "dataset"])))]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Detections file; every record is lifted on its own.
    #[arg(long)]
    pub detections: PathBuf,
    /// 2D normalization scale the model was trained with.
    #[arg(long)]
    pub norm_scale: Option<f64>,
    /// Take the normalization scale from this dataset manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "inferred.txt")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub source: ModelSource,
}
