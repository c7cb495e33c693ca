//! The lifter: a residual MLP mapping one view's normalized 2D pose to a
//! root-relative 3D pose in that camera's frame.
//!
//! ```text
//! dense(2N→W) → [dense → BN → ReLU → dense → BN → ReLU → +skip] × blocks → dense(W→3N)
//! ```
//!
//! The raw output is multiplied by `output_scale` (world units per network
//! unit) and centered on the root landmark, so the root of every prediction
//! is exactly zero. Gradients are computed analytically, including the path
//! through the batch statistics of every batch-norm layer.

mod checkpoint;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use ndarray::{Array1, Array2, ArrayD, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const FULL_WIDTH: usize = 1024;
pub const FULL_BLOCKS: usize = 4;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_landmarks: usize,
    pub root: usize,
    pub width: usize,
    pub blocks: usize,
    /// World units represented by one unit of raw network output.
    pub output_scale: f64,
}

impl ModelConfig {
    /// Width 1024 with four residual blocks.
    pub fn full(n_landmarks: usize) -> Self {
        Self {
            n_landmarks,
            root: 0,
            width: FULL_WIDTH,
            blocks: FULL_BLOCKS,
            output_scale: 1000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_landmarks < 2 {
            return Err(Error::Config(format!(
                "need at least 2 landmarks, got {}",
                self.n_landmarks
            )));
        }
        if self.root >= self.n_landmarks {
            return Err(Error::Config(format!(
                "root index {} out of range",
                self.root
            )));
        }
        if self.width == 0 {
            return Err(Error::Config("width must be positive".into()));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::Config("output scale must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.n_landmarks
    }

    pub fn output_dim(&self) -> usize {
        3 * self.n_landmarks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = Array2::from_shape_simple_fn((outputs, inputs), || dist.sample(rng));
        let bias = Array1::from_shape_simple_fn(outputs, || dist.sample(rng));
        Self { weight, bias }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub first: Dense,
    pub first_norm: BatchNorm,
    pub second: Dense,
    pub second_norm: BatchNorm,
}

/// All parameters of the lifter, learnable and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    pub input: Dense,
    pub blocks: Vec<ResidualBlock>,
    pub output: Dense,
    mode: Mode,
}

#[derive(Debug, Clone)]
struct NormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Array2<f64>,
    first_norm: NormCache,
    first_act: Array2<f64>,
    second_norm: NormCache,
    second_act: Array2<f64>,
}

/// Activations kept from a forward pass for [`ModelParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `B × 3N`, root-centered, world units.
    pub output: Array2<f64>,
    mode: Mode,
    input: Array2<f64>,
    blocks: Vec<BlockCache>,
    last_hidden: Array2<f64>,
}

impl ForwardPass {
    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// Gradient of a scalar with respect to every learnable tensor, in the order
/// of [`ModelParams::learnable`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<ArrayD<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            tensors: params
                .learnable()
                .iter()
                .map(|t| ArrayD::zeros(t.raw_dim()))
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().for_each(|t| *t *= factor);
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index of the first tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.tensors
            .iter()
            .position(|t| t.iter().any(|v| !v.is_finite()))
    }
}

impl ModelParams {
    /// Fan-in scaled uniform weights and biases, identity batch norms.
    /// Deterministic for a fixed seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.width;
        let input = Dense::init(config.input_dim(), w, &mut rng);
        let blocks = (0..config.blocks)
            .map(|_| ResidualBlock {
                first: Dense::init(w, w, &mut rng),
                first_norm: BatchNorm::new(w),
                second: Dense::init(w, w, &mut rng),
                second_norm: BatchNorm::new(w),
            })
            .collect();
        let output = Dense::init(w, config.output_dim(), &mut rng);
        Ok(Self {
            config,
            input,
            blocks,
            output,
            mode: Mode::Train,
        })
    }

    pub fn from_parts(
        config: ModelConfig,
        input: Dense,
        blocks: Vec<ResidualBlock>,
        output: Dense,
        mode: Mode,
    ) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let dense_ok =
            |d: &Dense, i: usize, o: usize| d.weight.dim() == (o, i) && d.bias.len() == o;
        let norm_ok = |n: &BatchNorm| {
            [&n.gamma, &n.beta, &n.running_mean, &n.running_var]
                .iter()
                .all(|t| t.len() == w)
                && n.running_var.iter().all(|v| *v > 0.0)
        };
        let shapes = dense_ok(&input, config.input_dim(), w)
            && dense_ok(&output, w, config.output_dim())
            && blocks.len() == config.blocks
            && blocks.iter().all(|b| {
                dense_ok(&b.first, w, w)
                    && dense_ok(&b.second, w, w)
                    && norm_ok(&b.first_norm)
                    && norm_ok(&b.second_norm)
            });
        if !shapes {
            return Err(Error::contract(
                "parameter tensors do not match the model configuration",
            ));
        }
        let params = Self {
            config,
            input,
            blocks,
            output,
            mode,
        };
        if params
            .all_tensors()
            .iter()
            .any(|(_, t)| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn parameter_count(&self) -> usize {
        self.learnable().iter().map(|t| t.len()).sum()
    }

    /// Names of the learnable tensors, matching [`Self::learnable`].
    pub fn learnable_names(&self) -> Vec<String> {
        let mut names = vec!["input.weight".to_string(), "input.bias".to_string()];
        for i in 0..self.blocks.len() {
            for part in [
                "first.weight",
                "first.bias",
                "first_norm.gamma",
                "first_norm.beta",
                "second.weight",
                "second.bias",
                "second_norm.gamma",
                "second_norm.beta",
            ] {
                names.push(format!("blocks.{i}.{part}"));
            }
        }
        names.push("output.weight".into());
        names.push("output.bias".into());
        names
    }

    pub fn learnable(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut out = vec![
            self.input.weight.view().into_dyn(),
            self.input.bias.view().into_dyn(),
        ];
        for b in &self.blocks {
            out.extend([
                b.first.weight.view().into_dyn(),
                b.first.bias.view().into_dyn(),
                b.first_norm.gamma.view().into_dyn(),
                b.first_norm.beta.view().into_dyn(),
                b.second.weight.view().into_dyn(),
                b.second.bias.view().into_dyn(),
                b.second_norm.gamma.view().into_dyn(),
                b.second_norm.beta.view().into_dyn(),
            ]);
        }
        out.push(self.output.weight.view().into_dyn());
        out.push(self.output.bias.view().into_dyn());
        out
    }

    pub fn learnable_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = vec![
            self.input.weight.view_mut().into_dyn(),
            self.input.bias.view_mut().into_dyn(),
        ];
        for b in &mut self.blocks {
            out.extend([
                b.first.weight.view_mut().into_dyn(),
                b.first.bias.view_mut().into_dyn(),
                b.first_norm.gamma.view_mut().into_dyn(),
                b.first_norm.beta.view_mut().into_dyn(),
                b.second.weight.view_mut().into_dyn(),
                b.second.bias.view_mut().into_dyn(),
                b.second_norm.gamma.view_mut().into_dyn(),
                b.second_norm.beta.view_mut().into_dyn(),
            ]);
        }
        out.push(self.output.weight.view_mut().into_dyn());
        out.push(self.output.bias.view_mut().into_dyn());
        out
    }

    /// Every tensor, learnable or not, with its checkpoint name.
    pub(crate) fn all_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewD<'_, f64>)> = self
            .learnable_names()
            .into_iter()
            .zip(self.learnable())
            .collect();
        for (i, b) in self.blocks.iter().enumerate() {
            for (tag, norm) in [
                ("first_norm", &b.first_norm),
                ("second_norm", &b.second_norm),
            ] {
                out.push((
                    format!("blocks.{i}.{tag}.running_mean"),
                    norm.running_mean.view().into_dyn(),
                ));
                out.push((
                    format!("blocks.{i}.{tag}.running_var"),
                    norm.running_var.view().into_dyn(),
                ));
            }
        }
        out
    }

    fn check_input(&self, input: &Array2<f64>) -> Result<()> {
        if input.ncols() != self.config.input_dim() {
            return Err(Error::LandmarkCount {
                expected: self.config.n_landmarks,
                got: input.ncols() / 2,
            });
        }
        if input.nrows() == 0 {
            return Err(Error::Empty("input batch"));
        }
        if self.mode == Mode::Train && input.nrows() < 2 {
            return Err(Error::contract(
                "train-mode batch norm needs at least 2 samples per batch",
            ));
        }
        Ok(())
    }

    fn normalize(&self, norm: &BatchNorm, z: &Array2<f64>) -> (Array2<f64>, NormCache) {
        let (mean, var) = match self.mode {
            Mode::Train => {
                let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                let var = z.var_axis(Axis(0), 0.0);
                (mean, var)
            }
            Mode::Eval => (norm.running_mean.clone(), norm.running_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
        let normalized = (z - &mean) * &inv_std;
        let mut y = &normalized * &norm.gamma + &norm.beta;
        y.mapv_inplace(|v| v.max(0.0));
        (
            y,
            NormCache {
                normalized,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        )
    }

    /// Runs the network on a `B × 2N` batch of normalized 2D poses.
    ///
    /// In train mode the batch statistics are used but the running statistics
    /// are left untouched; see [`Self::forward_train`].
    pub fn forward(&self, input: &Array2<f64>) -> Result<ForwardPass> {
        self.check_input(input)?;
        let mut h = self.input.apply(input);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (first_act, first_norm) = self.normalize(&block.first_norm, &block.first.apply(&h));
            let (second_act, second_norm) =
                self.normalize(&block.second_norm, &block.second.apply(&first_act));
            let next = &h + &second_act;
            caches.push(BlockCache {
                input: std::mem::replace(&mut h, next),
                first_norm,
                first_act,
                second_norm,
                second_act,
            });
        }
        let mut output = self.output.apply(&h);
        let n = self.config.n_landmarks;
        let root = self.config.root;
        let scale = self.config.output_scale;
        for mut row in output.rows_mut() {
            let origin = [row[3 * root], row[3 * root + 1], row[3 * root + 2]];
            for j in 0..n {
                for k in 0..3 {
                    row[3 * j + k] = scale * (row[3 * j + k] - origin[k]);
                }
            }
        }
        Ok(ForwardPass {
            output,
            mode: self.mode,
            input: input.clone(),
            blocks: caches,
            last_hidden: h,
        })
    }

    /// Forward pass that also folds the batch statistics into the running
    /// statistics (train mode only).
    pub fn forward_train(&mut self, input: &Array2<f64>) -> Result<ForwardPass> {
        let pass = self.forward(input)?;
        self.commit_batch_statistics(&pass);
        Ok(pass)
    }

    /// Momentum update of the running statistics from a train-mode pass.
    /// Running variances use the unbiased batch variance.
    pub fn commit_batch_statistics(&mut self, pass: &ForwardPass) {
        if pass.mode != Mode::Train {
            return;
        }
        let b = pass.batch_size() as f64;
        let correction = b / (b - 1.0);
        for (block, cache) in self.blocks.iter_mut().zip(&pass.blocks) {
            for (norm, stats) in [
                (&mut block.first_norm, &cache.first_norm),
                (&mut block.second_norm, &cache.second_norm),
            ] {
                Zip::from(&mut norm.running_mean)
                    .and(&stats.batch_mean)
                    .for_each(|r, m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
                Zip::from(&mut norm.running_var)
                    .and(&stats.batch_var)
                    .for_each(|r, v| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * correction);
            }
        }
    }

    /// Eval-mode prediction without keeping activations.
    pub fn predict(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        if self.mode != Mode::Eval {
            return Err(Error::contract("predict requires eval mode"));
        }
        Ok(self.forward(input)?.output)
    }

    /// Gradient of a scalar loss with respect to every learnable tensor, given
    /// the loss gradient `upstream` with respect to the pass output.
    pub fn backward(&self, pass: &ForwardPass, upstream: &Array2<f64>) -> Result<GradientSet> {
        if upstream.dim() != pass.output.dim() {
            return Err(Error::contract(format!(
                "upstream gradient has shape {:?}, output has {:?}",
                upstream.dim(),
                pass.output.dim()
            )));
        }
        if pass.blocks.len() != self.blocks.len() || pass.input.ncols() != self.config.input_dim() {
            return Err(Error::contract(
                "forward pass does not belong to these parameters",
            ));
        }
        let n = self.config.n_landmarks;
        let root = self.config.root;
        let scale = self.config.output_scale;

        // undo root-centering and output scaling
        let mut d_out = upstream * scale;
        for (mut row, up) in d_out.rows_mut().into_iter().zip(upstream.rows()) {
            for k in 0..3 {
                let total: f64 = (0..n).map(|j| up[3 * j + k]).sum();
                row[3 * root + k] -= scale * total;
            }
        }

        let mut grads: Vec<ArrayD<f64>> = Vec::with_capacity(4 + 8 * self.blocks.len());
        let (out_w, out_b, mut d_h) = dense_backward(&self.output, &pass.last_hidden, &d_out);

        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (block, cache) in self.blocks.iter().zip(&pass.blocks).rev() {
            // h_out = h_in + relu(bn2(dense2(relu(bn1(dense1(h_in))))))
            let d_y2 = relu_backward(&d_h, &cache.second_act);
            let (d_z2, g2, b2) =
                norm_backward(&block.second_norm, &cache.second_norm, &d_y2, pass.mode);
            let (w2, bias2, d_a1) = dense_backward(&block.second, &cache.first_act, &d_z2);
            let d_y1 = relu_backward(&d_a1, &cache.first_act);
            let (d_z1, g1, b1) =
                norm_backward(&block.first_norm, &cache.first_norm, &d_y1, pass.mode);
            let (w1, bias1, d_in) = dense_backward(&block.first, &cache.input, &d_z1);
            d_h += &d_in;
            block_grads.push([w1, bias1, g1, b1, w2, bias2, g2, b2]);
        }
        let (in_w, in_b, _) = dense_backward(&self.input, &pass.input, &d_h);

        grads.push(in_w);
        grads.push(in_b);
        for block in block_grads.into_iter().rev() {
            grads.extend(block);
        }
        grads.push(out_w);
        grads.push(out_b);
        Ok(GradientSet { tensors: grads })
    }
}

fn dense_backward(
    layer: &Dense,
    x: &Array2<f64>,
    d_y: &Array2<f64>,
) -> (ArrayD<f64>, ArrayD<f64>, Array2<f64>) {
    let d_w = d_y.t().dot(x);
    let d_b = d_y.sum_axis(Axis(0));
    let d_x = d_y.dot(&layer.weight);
    (d_w.into_dyn(), d_b.into_dyn(), d_x)
}

fn relu_backward(d_y: &Array2<f64>, activated: &Array2<f64>) -> Array2<f64> {
    let mut d = d_y.clone();
    Zip::from(&mut d).and(activated).for_each(|g, a| {
        if *a <= 0.0 {
            *g = 0.0;
        }
    });
    d
}

/// Backward through `γ·x̂ + β`, including the batch mean and variance in
/// train mode.
fn norm_backward(
    norm: &BatchNorm,
    cache: &NormCache,
    d_y: &Array2<f64>,
    mode: Mode,
) -> (Array2<f64>, ArrayD<f64>, ArrayD<f64>) {
    let d_gamma = (d_y * &cache.normalized).sum_axis(Axis(0));
    let d_beta = d_y.sum_axis(Axis(0));
    let d_xhat = d_y * &norm.gamma;
    let d_z = match mode {
        Mode::Eval => d_xhat * &cache.inv_std,
        Mode::Train => {
            let mean_d = d_xhat.mean_axis(Axis(0)).expect("non-empty");
            let mean_dx = (&d_xhat * &cache.normalized)
                .mean_axis(Axis(0))
                .expect("non-empty");
            let mut d_z = d_xhat;
            Zip::from(d_z.rows_mut())
                .and(cache.normalized.rows())
                .for_each(|mut row, xhat| {
                    Zip::from(&mut row)
                        .and(&xhat)
                        .and(&mean_d)
                        .and(&mean_dx)
                        .and(&cache.inv_std)
                        .for_each(|g, xh, md, mdx, is| *g = is * (*g - md - xh * mdx));
                });
            d_z
        }
    };
    (d_z, d_gamma.into_dyn(), d_beta.into_dyn())
}

/// Flattens normalized 2D poses into a `B × 2N` network input.
pub fn input_matrix<'a>(
    poses: impl IntoIterator<Item = &'a crate::geometry::Pose2D>,
    n: usize,
) -> Result<Array2<f64>> {
    let mut rows = Vec::new();
    let mut count = 0;
    for pose in poses {
        if pose.len() != n {
            return Err(Error::LandmarkCount {
                expected: n,
                got: pose.len(),
            });
        }
        rows.extend(pose.flat());
        count += 1;
    }
    Ok(Array2::from_shape_vec((count, 2 * n), rows).expect("row-major shape"))
}
