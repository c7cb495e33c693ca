//! Mini-batch Adam training of the lifter.
//!
//! Each epoch shuffles the training samples with a generator derived from
//! the seed and the epoch index, so a run resumed from a checkpoint continues
//! exactly as an uninterrupted one. All `C` views of a batch go through the
//! network together as one `B·C`-row batch. The last incomplete batch of an
//! epoch is dropped.

mod adam;
mod metrics;

pub use adam::{adam_step, adam_update, AdamConfig, OptimizerState};
pub use metrics::{format_metrics, parse_metrics, EpochMetrics, METRICS_HEADER};

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{normalize_2d, Dataset, Norm2DParams};
use crate::eval::p_mpjpe;
use crate::geometry::{root_center, world_to_camera, CameraId, Frame, Pose2D, Pose3D};
use crate::losses::{
    total_objective, LossOptions, LossWeights, MultiViewBatch, MultiViewSample, Schedule,
};
use crate::model::{input_matrix, write_checkpoint, Checkpoint, Mode, ModelConfig, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weights: LossWeights,
    /// Fraction of the final epochs during which `L_out` is active.
    pub out_loss_fraction: f64,
    pub seed: u64,
    /// Held-out P-MPJPE is logged every this many epochs (0: never).
    pub eval_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Intermediate checkpoints every this many epochs (0: final only).
    pub checkpoint_every: usize,
    pub width: usize,
    pub blocks: usize,
    pub output_scale: f64,
    /// World units per length unit of the 3D losses (see [`LossOptions`]).
    pub loss_length_unit: f64,
    pub consistency_symmetric: bool,
    pub output_through_dlt: bool,
}

impl TrainConfig {
    /// Batch 256, 200 epochs, width 256: sized for one CPU core.
    pub fn desk() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-3,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weights: LossWeights::default(),
            out_loss_fraction: 0.1,
            seed: 0,
            eval_every: 10,
            checkpoint_dir: None,
            checkpoint_every: 0,
            width: 256,
            blocks: 4,
            output_scale: 30.0,
            loss_length_unit: 1000.0,
            consistency_symmetric: false,
            output_through_dlt: false,
        }
    }

    /// Batch 8192, 500 epochs, width 1024.
    pub fn full() -> Self {
        Self {
            batch_size: 8192,
            epochs: 500,
            width: crate::model::FULL_WIDTH,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected desk or full)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.out_loss_fraction) {
            return Err(Error::Config("out_loss_fraction must lie in [0, 1]".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0)
        {
            return Err(Error::Config(
                "Adam needs β₁, β₂ in [0, 1) and ε > 0".into(),
            ));
        }
        self.weights.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            consistency_symmetric: self.consistency_symmetric,
            output_through_dlt: self.output_through_dlt,
            length_unit: self.loss_length_unit,
        }
    }

    pub fn model_config(&self, n_landmarks: usize, root: usize) -> ModelConfig {
        ModelConfig {
            n_landmarks,
            root,
            width: self.width,
            blocks: self.blocks,
            output_scale: self.output_scale,
        }
    }

    /// First (0-based) epoch with `L_out` active.
    pub fn out_loss_start(&self) -> usize {
        out_loss_start(self.epochs, self.out_loss_fraction)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// `⌈(1 − fraction)·epochs⌉`, tolerant of rounding in the product.
pub fn out_loss_start(epochs: usize, fraction: f64) -> usize {
    let start = ((1.0 - fraction) * epochs as f64 - 1e-9).ceil();
    (start.max(0.0) as usize).min(epochs)
}

/// Network inputs and loss-side data for every sample of a dataset.
struct Prepared {
    samples: Vec<MultiViewSample>,
    /// `S·C × 2N`, sample-major.
    inputs: Array2<f64>,
}

fn prepare(data: &Dataset) -> Result<Prepared> {
    let samples = (0..data.len())
        .map(|i| data.multiview_sample(i))
        .collect::<Result<Vec<_>>>()?;
    let inputs = input_matrix(
        samples.iter().flat_map(|s| &s.detections),
        data.n_landmarks(),
    )?;
    Ok(Prepared { samples, inputs })
}

/// Camera-frame, root-centered ground truth for every (sample, view) of
/// `data`, sample-major.
fn camera_targets(data: &Dataset) -> Result<Vec<Pose3D>> {
    let mut out = Vec::with_capacity(data.len() * data.rig.len());
    for s in &data.samples {
        let gt = s
            .gt_pose
            .as_ref()
            .ok_or_else(|| Error::contract(format!("sample {} has no ground truth", s.id)))?;
        for cam in data.rig.cameras() {
            out.push(root_center(&world_to_camera(gt, cam)?, data.root())?.0);
        }
    }
    Ok(out)
}

/// Eval-mode predictions for a `rows × 2N` input, in chunks.
fn predict_rows(params: &ModelParams, inputs: &Array2<f64>) -> Result<Array2<f64>> {
    let mut eval = params.clone();
    eval.set_mode(Mode::Eval);
    let mut out = Array2::zeros((inputs.nrows(), params.config().output_dim()));
    for (i, chunk) in inputs.axis_chunks_iter(Axis(0), 1024).enumerate() {
        let pred = eval.predict(&chunk.to_owned())?;
        out.slice_mut(ndarray::s![i * 1024..i * 1024 + pred.nrows(), ..])
            .assign(&pred);
    }
    Ok(out)
}

/// Mean P-MPJPE over every held-out (sample, view) against camera-frame,
/// root-centered ground truth.
pub fn holdout_p_mpjpe(params: &ModelParams, holdout: &Dataset) -> Result<f64> {
    let prepared = prepare(holdout)?;
    let targets = camera_targets(holdout)?;
    score(params, &prepared, &targets, holdout)
}

fn score(
    params: &ModelParams,
    prepared: &Prepared,
    targets: &[Pose3D],
    data: &Dataset,
) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Empty("held-out set"));
    }
    let pred = predict_rows(params, &prepared.inputs)?;
    let ids: Vec<CameraId> = data.rig.ids().collect();
    let mut total = 0.0;
    for (row, (p, gt)) in pred.rows().into_iter().zip(targets).enumerate() {
        let flat: Vec<f64> = p.to_vec();
        let pose = Pose3D::from_flat(&flat, Frame::Camera(ids[row % ids.len()]), true);
        total += p_mpjpe(&pose, gt)?;
    }
    Ok(total / targets.len() as f64)
}

/// State of a training run between epochs.
pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a Dataset,
    prepared: Prepared,
    holdout: Option<(&'a Dataset, Prepared, Vec<Pose3D>)>,
    params: ModelParams,
    optimizer: OptimizerState,
    epoch: usize,
    history: Vec<EpochMetrics>,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub history: Vec<EpochMetrics>,
}

impl<'a> Trainer<'a> {
    /// Fresh run from the seeded initialization.
    pub fn new(
        data: &'a Dataset,
        holdout: Option<&'a Dataset>,
        config: TrainConfig,
    ) -> Result<Self> {
        let params = ModelParams::init(
            config.model_config(data.n_landmarks(), data.root()),
            config.seed,
        )?;
        let optimizer = OptimizerState::new(&params);
        Self::build(data, holdout, config, params, optimizer, 0)
    }

    /// Continues a run from `checkpoint`, which must carry optimizer state.
    pub fn resume(
        data: &'a Dataset,
        holdout: Option<&'a Dataset>,
        config: TrainConfig,
        checkpoint: Checkpoint,
    ) -> Result<Self> {
        let optimizer = checkpoint
            .optimizer
            .ok_or_else(|| Error::Checkpoint("resuming needs optimizer state".into()))?;
        let expected = config.model_config(data.n_landmarks(), data.root());
        if *checkpoint.params.config() != expected {
            return Err(Error::Checkpoint(
                "checkpoint architecture does not match the configuration".into(),
            ));
        }
        let mut params = checkpoint.params;
        params.set_mode(Mode::Train);
        Self::build(
            data,
            holdout,
            config,
            params,
            optimizer,
            checkpoint.epoch as usize,
        )
    }

    fn build(
        data: &'a Dataset,
        holdout: Option<&'a Dataset>,
        config: TrainConfig,
        params: ModelParams,
        optimizer: OptimizerState,
        epoch: usize,
    ) -> Result<Self> {
        config.validate()?;
        if data.rig.len() < 2 {
            return Err(Error::InsufficientViews(data.rig.len()));
        }
        if config.epochs > 0 && data.len() < config.batch_size {
            return Err(Error::Config(format!(
                "{} training samples cannot fill one batch of {}",
                data.len(),
                config.batch_size
            )));
        }
        let prepared = prepare(data)?;
        let holdout = match holdout {
            Some(h) if h.has_ground_truth() && config.eval_every > 0 => {
                Some((h, prepare(h)?, camera_targets(h)?))
            }
            _ => None,
        };
        Ok(Self {
            config,
            data,
            prepared,
            holdout,
            params,
            optimizer,
            epoch,
            history: Vec::new(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            epoch: self.epoch as u64,
            optimizer: Some(self.optimizer.clone()),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn epoch_order(&self) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1 + self.epoch as u64);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Runs one epoch and returns its metrics row.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        let schedule = if epoch >= self.config.out_loss_start() {
            Schedule::WithOut
        } else {
            Schedule::WithoutOut
        };
        let options = self.config.loss_options();
        let adam = self.config.adam();
        let c = self.data.rig.len();
        let n = self.data.n_landmarks();
        let ids: Vec<CameraId> = self.data.rig.ids().collect();
        let b = self.config.batch_size;
        let order = self.epoch_order();
        let mut sums = [0.0; 5];
        let mut batches = 0usize;

        for (batch_index, chunk) in order.chunks_exact(b).enumerate() {
            let diverged = |reason: String| Error::Diverged {
                epoch,
                batch: batch_index,
                reason,
            };
            let mut rows = Array2::zeros((b * c, 2 * n));
            for (k, &s) in chunk.iter().enumerate() {
                rows.slice_mut(ndarray::s![k * c..(k + 1) * c, ..]).assign(
                    &self
                        .prepared
                        .inputs
                        .slice(ndarray::s![s * c..(s + 1) * c, ..]),
                );
            }
            let pass = self.params.forward_train(&rows)?;
            let predictions: Array3<f64> = pass
                .output
                .clone()
                .into_shape_with_order((b, c, 3 * n))
                .expect("sample-major rows");
            let samples = chunk
                .iter()
                .map(|&s| self.prepared.samples[s].clone())
                .collect();
            let batch = MultiViewBatch::new(
                &self.data.rig,
                ids.clone(),
                n,
                self.data.root(),
                self.data.normalization.scale,
                samples,
                predictions,
            )?;
            let objective = total_objective(
                &batch,
                &self.data.rig,
                &self.config.weights,
                schedule,
                &options,
            )
            .map_err(|e| {
                if e.is_numerical() {
                    diverged(e.to_string())
                } else {
                    e
                }
            })?;
            if !objective.total.is_finite() {
                return Err(diverged(format!("objective is {}", objective.total)));
            }
            let upstream = objective
                .grad
                .into_shape_with_order((b * c, 3 * n))
                .expect("sample-major gradient");
            let grads = self.params.backward(&pass, &upstream)?;
            adam_step(&mut self.params, &grads, &mut self.optimizer, &adam)
                .map_err(|e| diverged(e.to_string()))?;

            let parts = objective.components;
            for (sum, v) in sums.iter_mut().zip([
                parts.l_in,
                parts.l_proj,
                parts.l_con,
                parts.l_out,
                objective.total,
            ]) {
                *sum += v;
            }
            batches += 1;
        }

        self.epoch += 1;
        let evaluate = self.config.eval_every > 0
            && (self.epoch.is_multiple_of(self.config.eval_every)
                || self.epoch == self.config.epochs);
        let p_mpjpe = match (&self.holdout, evaluate) {
            (Some((h, prepared, targets)), true) => {
                Some(score(&self.params, prepared, targets, h)?)
            }
            _ => None,
        };
        let k = batches.max(1) as f64;
        let row = EpochMetrics {
            epoch,
            l_in: sums[0] / k,
            l_proj: sums[1] / k,
            l_con: sums[2] / k,
            l_out: sums[3] / k,
            total: sums[4] / k,
            p_mpjpe,
        };
        self.history.push(row);
        if let Some(dir) = &self.config.checkpoint_dir {
            let every = self.config.checkpoint_every;
            if every > 0 && self.epoch.is_multiple_of(every) && self.epoch < self.config.epochs {
                write_checkpoint(&checkpoint_path(dir, self.epoch), &self.checkpoint())?;
            }
        }
        Ok(row)
    }

    /// Runs the remaining epochs. With a checkpoint directory, the final
    /// state is written there as well.
    pub fn run(mut self) -> Result<TrainOutcome> {
        while !self.is_finished() {
            self.run_epoch()?;
        }
        if let Some(dir) = &self.config.checkpoint_dir {
            write_checkpoint(&checkpoint_path(dir, self.epoch), &self.checkpoint())?;
        }
        Ok(TrainOutcome {
            params: self.params,
            optimizer: self.optimizer,
            history: self.history,
        })
    }
}

/// `<dir>/epoch_<completed epochs, 5 digits>.ckpt`
pub fn checkpoint_path(dir: &Path, completed_epochs: usize) -> PathBuf {
    dir.join(format!("epoch_{completed_epochs:05}.ckpt"))
}

/// Trains from the seeded initialization for `config.epochs` epochs.
pub fn train(
    data: &Dataset,
    holdout: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    Trainer::new(data, holdout, config.clone())?.run()
}

/// Single-view inference: normalize, forward, root-relative pose in the
/// frame of `camera`. No calibration is used; `camera` only labels the
/// result.
pub fn infer(
    params: &ModelParams,
    detection: &Pose2D,
    norm: &Norm2DParams,
    camera: CameraId,
) -> Result<Pose3D> {
    Ok(infer_batch(params, std::slice::from_ref(detection), norm, camera)?.remove(0))
}

pub fn infer_batch(
    params: &ModelParams,
    detections: &[Pose2D],
    norm: &Norm2DParams,
    camera: CameraId,
) -> Result<Vec<Pose3D>> {
    if params.mode() != Mode::Eval {
        return Err(Error::contract("inference requires eval mode"));
    }
    let cfg = params.config();
    let normalized = detections
        .iter()
        .map(|d| {
            d.validate(cfg.n_landmarks)?;
            Ok(normalize_2d(d, cfg.root, norm)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let inputs = input_matrix(&normalized, cfg.n_landmarks)?;
    let out = predict_rows(params, &inputs)?;
    Ok(out
        .rows()
        .into_iter()
        .map(|r| Pose3D::from_flat(&r.to_vec(), Frame::Camera(camera), true))
        .collect())
}

/// One row of the loss ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub weights: LossWeights,
    pub out_loss_fraction: f64,
    pub p_mpjpe: f64,
}

/// The five loss configurations, in table order, built from the weights and
/// schedule of `base`.
pub fn ablation_configs(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let w = base.weights;
    let with = |name, w_in, w_proj, w_con, w_out, fraction| {
        let mut cfg = base.clone();
        cfg.weights = LossWeights {
            w_in,
            w_proj,
            w_con,
            w_out,
        };
        cfg.out_loss_fraction = fraction;
        (name, cfg)
    };
    vec![
        with("L_in", w.w_in, 0.0, 0.0, 0.0, 0.0),
        with("L_proj", 0.0, w.w_proj, 0.0, 0.0, 0.0),
        with("L_in+L_proj", w.w_in, w.w_proj, 0.0, 0.0, 0.0),
        with("+L_con", w.w_in, w.w_proj, w.w_con, 0.0, 0.0),
        with(
            "+L_out",
            w.w_in,
            w.w_proj,
            w.w_con,
            w.w_out,
            base.out_loss_fraction,
        ),
    ]
}

/// Trains each ablation configuration under the same seed and scores it on
/// `holdout`.
pub fn run_ablation(
    data: &Dataset,
    holdout: &Dataset,
    base: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    ablation_configs(base)
        .into_iter()
        .map(|(name, mut cfg)| {
            cfg.eval_every = 0;
            cfg.checkpoint_dir = None;
            let outcome = train(data, None, &cfg)?;
            Ok(AblationRow {
                name,
                weights: cfg.weights,
                out_loss_fraction: cfg.out_loss_fraction,
                p_mpjpe: holdout_p_mpjpe(&outcome.params, holdout)?,
            })
        })
        .collect()
}
