//! The four self-supervision losses and their weighted sum.
//!
//! Every loss is mean-normalized and returns its value together with the
//! gradient with respect to the per-view predictions. Pseudo-labels
//! (triangulations, consistency targets) are constants unless an option
//! says otherwise.
//!
//! | loss | norm | normalizer |
//! |------|------|------------|
//! | input triangulation | squared L2 | `S·C·N` |
//! | re-projection | L1 | `S·C²·2N` |
//! | consistency | L1 | `S·C·(C−1)·3N` |
//! | output triangulation | squared L2 | `S·C·N` |

mod batch;

pub use batch::{MultiViewBatch, MultiViewSample};

use nalgebra::{Matrix3, Vector2, Vector3};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    conditioning_scale, project, root_center, triangulate_landmark_jacobian, triangulate_list,
    world_to_camera, CameraRig, CameraView, DltView, Frame, Pose2D, Pose3D, WorldConditioning,
};
use crate::{Error, Result};

/// `ω₁…ω₄` of the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_in: f64,
    pub w_proj: f64,
    pub w_con: f64,
    pub w_out: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_in: 1.0,
            w_proj: 1.0,
            w_con: 0.001,
            w_out: 0.01,
        }
    }
}

impl LossWeights {
    pub fn new(w_in: f64, w_proj: f64, w_con: f64, w_out: f64) -> Result<Self> {
        let w = Self {
            w_in,
            w_proj,
            w_con,
            w_out,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_in, self.w_proj, self.w_con, self.w_out];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Whether the output triangulation term is part of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    WithOut,
    WithoutOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    /// Let gradients flow into the target view of the consistency loss too.
    pub consistency_symmetric: bool,
    /// Differentiate the output triangulation through the DLT solve
    /// (per-view conditioning held constant).
    pub output_through_dlt: bool,
    /// World units per loss length unit. [`total_objective`] measures the 3D
    /// residuals in this unit (1000 with a millimetre rig gives metres); the
    /// individual loss functions always report world units.
    pub length_unit: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            consistency_symmetric: false,
            output_through_dlt: false,
            length_unit: 1.0,
        }
    }
}

/// A loss value and its gradient with respect to the predictions.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Array3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_in: f64,
    pub l_proj: f64,
    pub l_con: f64,
    pub l_out: f64,
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub total: f64,
    pub components: LossBreakdown,
    pub grad: Array3<f64>,
}

fn pred(p: &Array3<f64>, s: usize, c: usize, n: usize) -> Vector3<f64> {
    Vector3::new(p[[s, c, 3 * n]], p[[s, c, 3 * n + 1]], p[[s, c, 3 * n + 2]])
}

fn add(g: &mut Array3<f64>, s: usize, c: usize, n: usize, v: &Vector3<f64>) {
    g[[s, c, 3 * n]] += v.x;
    g[[s, c, 3 * n + 1]] += v.y;
    g[[s, c, 3 * n + 2]] += v.z;
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn views<'r>(batch: &MultiViewBatch, rig: &'r CameraRig) -> Result<Vec<&'r CameraView>> {
    batch.cameras().iter().map(|id| rig.camera(*id)).collect()
}

/// Root-centered camera-frame view of a world pose.
fn camera_label(world: &Pose3D, cam: &CameraView, root: usize) -> Result<Pose3D> {
    Ok(root_center(&world_to_camera(world, cam)?, root)?.0)
}

/// `Σ‖label − prediction‖²` against per-view labels, mean over `S·C·N`.
fn squared_l2(
    batch: &MultiViewBatch,
    predictions: &Array3<f64>,
    labels: &[Vec<Pose3D>],
) -> LossValue {
    let (s_count, c_count, n) = (batch.len(), batch.n_cameras(), batch.n_landmarks());
    let norm = (s_count * c_count * n) as f64;
    let mut grad = Array3::zeros(predictions.raw_dim());
    let mut value = 0.0;
    for s in 0..s_count {
        for c in 0..c_count {
            for i in 0..n {
                let r = pred(predictions, s, c, i) - labels[s][c].landmarks[i];
                value += r.norm_squared();
                add(&mut grad, s, c, i, &(r * (2.0 / norm)));
            }
        }
    }
    LossValue {
        value: value / norm,
        grad,
    }
}

/// Input triangulation loss: each view's prediction against the
/// camera-frame, root-centered triangulation of the detections.
pub fn loss_input_triangulation(batch: &MultiViewBatch, rig: &CameraRig) -> Result<LossValue> {
    let labels = input_labels(batch, rig)?;
    Ok(squared_l2(batch, batch.predictions(), &labels))
}

/// Per-sample, per-view pseudo-labels of the input triangulation loss.
pub fn input_labels(batch: &MultiViewBatch, rig: &CameraRig) -> Result<Vec<Vec<Pose3D>>> {
    let cams = views(batch, rig)?;
    batch
        .samples()
        .iter()
        .enumerate()
        .map(|(s, sample)| {
            let tri = sample
                .input_triangulation
                .as_ref()
                .ok_or_else(|| Error::contract(format!("sample {s} has no input triangulation")))?;
            cams.iter()
                .map(|cam| camera_label(tri, cam, batch.root()))
                .collect()
        })
        .collect()
}

/// Absolute camera-frame position of prediction `(s, c′)` re-expressed in
/// camera `c`.
#[allow(clippy::too_many_arguments)]
fn anchored_in(
    predictions: &Array3<f64>,
    s: usize,
    from: usize,
    from_cam: &CameraView,
    to_cam: &CameraView,
    anchor: &Vector3<f64>,
    i: usize,
) -> Vector3<f64> {
    let local = pred(predictions, s, from, i) + anchor;
    to_cam.to_camera(&from_cam.to_world(&local))
}

/// Re-projection loss: every view's anchored prediction projected into every
/// camera (including its own) against that camera's detection, L1 in
/// normalized image coordinates.
pub fn loss_reprojection(batch: &MultiViewBatch, rig: &CameraRig) -> Result<LossValue> {
    let cams = views(batch, rig)?;
    let predictions = batch.predictions();
    let (s_count, c_count, n) = (batch.len(), batch.n_cameras(), batch.n_landmarks());
    let norm = (s_count * c_count * c_count * 2 * n) as f64;
    let scale = batch.norm_scale();
    let mut grad = Array3::zeros(predictions.raw_dim());
    let mut value = 0.0;
    for (s, sample) in batch.samples().iter().enumerate() {
        let anchors = sample.anchors_or_err(s)?;
        for (c, cam) in cams.iter().enumerate() {
            let detection = &sample.detections[c];
            for (src, src_cam) in cams.iter().enumerate() {
                let rel = src_cam.relative_rotation(cam);
                for i in 0..n {
                    let x = anchored_in(predictions, s, src, src_cam, cam, &anchors[src], i);
                    let (px, jac) = match (cam.project_point(&x), cam.projection_jacobian(&x)) {
                        (Some(px), Some(jac)) => (px, jac),
                        _ => {
                            return Err(Error::DegenerateDepth {
                                landmark: i,
                                depth: x.z,
                            })
                        }
                    };
                    let projected = (px - sample.origins[c]) / scale;
                    let r = detection.landmarks[i] - projected;
                    value += r.x.abs() + r.y.abs();
                    // d|r|/dX = -sign(r)·J/scale
                    let d_x = -(jac[0] * sign(r.x) + jac[1] * sign(r.y)) / (scale * norm);
                    add(&mut grad, s, src, i, &(rel.transpose() * d_x));
                }
            }
        }
    }
    Ok(LossValue {
        value: value / norm,
        grad,
    })
}

/// Consistency L1 between `live` predictions transformed into each other
/// view and `targets`. Returns the value and both gradients.
fn consistency_terms(
    batch: &MultiViewBatch,
    rig: &CameraRig,
    live: &Array3<f64>,
    targets: &Array3<f64>,
) -> Result<(f64, Array3<f64>, Array3<f64>)> {
    let cams = views(batch, rig)?;
    let (s_count, c_count, n) = (batch.len(), batch.n_cameras(), batch.n_landmarks());
    if c_count < 2 {
        return Err(Error::InsufficientViews(c_count));
    }
    let root = batch.root();
    let norm = (s_count * c_count * (c_count - 1) * 3 * n) as f64;
    let mut grad_live = Array3::zeros(live.raw_dim());
    let mut grad_target = Array3::zeros(targets.raw_dim());
    let mut value = 0.0;
    for s in 0..s_count {
        for (c, cam) in cams.iter().enumerate() {
            for (src, src_cam) in cams.iter().enumerate() {
                if src == c {
                    continue;
                }
                // anchoring and translation cancel under re-centering
                let rel: Matrix3<f64> = src_cam.relative_rotation(cam);
                let src_root = pred(live, s, src, root);
                let mut root_grad = Vector3::zeros();
                for i in 0..n {
                    let moved = rel * (pred(live, s, src, i) - src_root);
                    let r = pred(targets, s, c, i) - moved;
                    value += r.iter().map(|v| v.abs()).sum::<f64>();
                    let d_r = r.map(sign) / norm;
                    add(&mut grad_target, s, c, i, &d_r);
                    let d_src = -(rel.transpose() * d_r);
                    add(&mut grad_live, s, src, i, &d_src);
                    root_grad -= d_src;
                }
                add(&mut grad_live, s, src, root, &root_grad);
            }
        }
    }
    Ok((value / norm, grad_live, grad_target))
}

/// Consistency loss. View `c` is the target; by default only the
/// transformed view `c′` receives gradient.
pub fn loss_consistency(
    batch: &MultiViewBatch,
    rig: &CameraRig,
    options: &LossOptions,
) -> Result<LossValue> {
    let p = batch.predictions();
    let (value, mut grad, grad_target) = consistency_terms(batch, rig, p, p)?;
    if options.consistency_symmetric {
        grad += &grad_target;
    }
    Ok(LossValue { value, grad })
}

/// Consistency loss against explicitly frozen targets.
pub fn loss_consistency_against(
    batch: &MultiViewBatch,
    rig: &CameraRig,
    targets: &Array3<f64>,
) -> Result<LossValue> {
    let (value, grad, _) = consistency_terms(batch, rig, batch.predictions(), targets)?;
    Ok(LossValue { value, grad })
}

/// Per-view Hartley conditioning `(centroid, scale)` used when triangulating
/// the projected predictions of each sample.
pub type ViewConditioning = Vec<Vec<(Vector2<f64>, f64)>>;

fn projected_predictions(
    batch: &MultiViewBatch,
    cams: &[&CameraView],
    s: usize,
) -> Result<Vec<Pose2D>> {
    let anchors = batch.samples()[s].anchors_or_err(s)?;
    cams.iter()
        .enumerate()
        .map(|(c, cam)| {
            let abs = Pose3D {
                landmarks: (0..batch.n_landmarks())
                    .map(|i| pred(batch.predictions(), s, c, i) + anchors[c])
                    .collect(),
                frame: Frame::Camera(cam.id()),
                root_relative: false,
            };
            project(&abs, cam)
        })
        .collect()
}

/// Conditioning the output triangulation would use for the current
/// predictions.
pub fn output_conditioning(batch: &MultiViewBatch, rig: &CameraRig) -> Result<ViewConditioning> {
    let cams = views(batch, rig)?;
    (0..batch.len())
        .map(|s| {
            Ok(projected_predictions(batch, &cams, s)?
                .iter()
                .map(conditioning_scale)
                .collect())
        })
        .collect()
}

/// World-frame output triangulation of every sample: predictions anchored,
/// projected into their own camera and re-triangulated.
pub fn output_triangulation(batch: &MultiViewBatch, rig: &CameraRig) -> Result<Vec<Pose3D>> {
    let cams = views(batch, rig)?;
    if cams.len() < 2 {
        return Err(Error::InsufficientViews(cams.len()));
    }
    (0..batch.len())
        .map(|s| {
            let projected = projected_predictions(batch, &cams, s)?;
            let list: Vec<_> = cams
                .iter()
                .map(|c| c.projection_matrix())
                .zip(projected.iter())
                .collect();
            triangulate_list(&list)
        })
        .collect()
}

/// Output triangulation with the given conditioning, plus `∂X/∂(u, v)` per
/// sample, landmark and view.
#[allow(clippy::type_complexity)]
fn output_triangulation_jacobian(
    batch: &MultiViewBatch,
    cams: &[&CameraView],
    conditioning: &ViewConditioning,
) -> Result<Vec<(Pose3D, Vec<Vec<[Vector3<f64>; 2]>>)>> {
    if cams.len() < 2 {
        return Err(Error::InsufficientViews(cams.len()));
    }
    let world = WorldConditioning::from_projections(cams.iter().map(|c| c.projection_matrix()));
    (0..batch.len())
        .map(|s| {
            let projected = projected_predictions(batch, cams, s)?;
            let mut landmarks = Vec::with_capacity(batch.n_landmarks());
            let mut jacobians = Vec::with_capacity(batch.n_landmarks());
            for i in 0..batch.n_landmarks() {
                let dlt: Vec<DltView<'_>> = cams
                    .iter()
                    .enumerate()
                    .map(|(c, cam)| DltView {
                        projection: cam.projection_matrix(),
                        point: projected[c].landmarks[i],
                        centroid: conditioning[s][c].0,
                        scale: conditioning[s][c].1,
                    })
                    .collect();
                let (x, jac) = triangulate_landmark_jacobian(&dlt, &world, i)?;
                landmarks.push(x);
                jacobians.push(jac);
            }
            Ok((Pose3D::world(landmarks), jacobians))
        })
        .collect()
}

/// Output triangulations computed with fixed per-view conditioning.
pub fn output_triangulation_with_conditioning(
    batch: &MultiViewBatch,
    rig: &CameraRig,
    conditioning: &ViewConditioning,
) -> Result<Vec<Pose3D>> {
    let cams = views(batch, rig)?;
    Ok(output_triangulation_jacobian(batch, &cams, conditioning)?
        .into_iter()
        .map(|(pose, _)| pose)
        .collect())
}

fn labels_from_world(
    batch: &MultiViewBatch,
    cams: &[&CameraView],
    worlds: &[Pose3D],
) -> Result<Vec<Vec<Pose3D>>> {
    worlds
        .iter()
        .map(|w| {
            cams.iter()
                .map(|cam| camera_label(w, cam, batch.root()))
                .collect()
        })
        .collect()
}

/// Output triangulation loss against labels recomputed from the current
/// predictions.
pub fn loss_output_triangulation(
    batch: &MultiViewBatch,
    rig: &CameraRig,
    options: &LossOptions,
) -> Result<LossValue> {
    let cams = views(batch, rig)?;
    if !options.output_through_dlt {
        let worlds = output_triangulation(batch, rig)?;
        return loss_output_triangulation_against(batch, rig, &worlds);
    }
    let conditioning = output_conditioning(batch, rig)?;
    let solved = output_triangulation_jacobian(batch, &cams, &conditioning)?;
    let worlds: Vec<Pose3D> = solved.iter().map(|(p, _)| p.clone()).collect();
    let labels = labels_from_world(batch, &cams, &worlds)?;
    let mut loss = squared_l2(batch, batch.predictions(), &labels);

    // label_{c,i} = R_c (Y_i − Y_root); dL/dlabel = −grad of the detached form
    let root = batch.root();
    let n = batch.n_landmarks();
    for (s, (_, jacobians)) in solved.iter().enumerate() {
        let anchors = batch.samples()[s].anchors_or_err(s)?;
        let mut d_world = vec![Vector3::zeros(); n];
        for (c, cam) in cams.iter().enumerate() {
            for i in 0..n {
                let d_label = -pred(&loss.grad, s, c, i);
                let d = cam.rotation().transpose() * d_label;
                d_world[i] += d;
                d_world[root] -= d;
            }
        }
        let mut extra = Vec::new();
        for (i, jac_i) in jacobians.iter().enumerate() {
            for (c, cam) in cams.iter().enumerate() {
                let d_u = jac_i[c][0].dot(&d_world[i]);
                let d_v = jac_i[c][1].dot(&d_world[i]);
                let x = pred(batch.predictions(), s, c, i) + anchors[c];
                let proj = cam.projection_jacobian(&x).ok_or(Error::DegenerateDepth {
                    landmark: i,
                    depth: x.z,
                })?;
                extra.push((c, i, proj[0] * d_u + proj[1] * d_v));
            }
        }
        for (c, i, g) in extra {
            add(&mut loss.grad, s, c, i, &g);
        }
    }
    Ok(loss)
}

/// Output triangulation loss against fixed world-frame labels.
pub fn loss_output_triangulation_against(
    batch: &MultiViewBatch,
    rig: &CameraRig,
    worlds: &[Pose3D],
) -> Result<LossValue> {
    let cams = views(batch, rig)?;
    if worlds.len() != batch.len() {
        return Err(Error::contract(
            "one output triangulation per sample is required",
        ));
    }
    let labels = labels_from_world(batch, &cams, worlds)?;
    Ok(squared_l2(batch, batch.predictions(), &labels))
}

/// All four losses evaluated independently.
pub struct AllLosses {
    pub l_in: Result<LossValue>,
    pub l_proj: Result<LossValue>,
    pub l_con: Result<LossValue>,
    pub l_out: Result<LossValue>,
}

pub fn all_losses(batch: &MultiViewBatch, rig: &CameraRig, options: &LossOptions) -> AllLosses {
    AllLosses {
        l_in: loss_input_triangulation(batch, rig),
        l_proj: loss_reprojection(batch, rig),
        l_con: loss_consistency(batch, rig, options),
        l_out: loss_output_triangulation(batch, rig, options),
    }
}

/// `ω₁L_in + ω₂L_proj + ω₃L_con (+ ω₄L_out)` with the matching gradient.
///
/// Components with zero weight (or `L_out` outside its schedule) are still
/// evaluated so they can be reported; their failures are reported as NaN
/// instead of aborting.
pub fn total_objective(
    batch: &MultiViewBatch,
    rig: &CameraRig,
    weights: &LossWeights,
    schedule: Schedule,
    options: &LossOptions,
) -> Result<Objective> {
    weights.validate()?;
    let u = options.length_unit;
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::Config(format!(
            "loss length unit must be positive, got {u}"
        )));
    }
    let w_out = match schedule {
        Schedule::WithOut => weights.w_out,
        Schedule::WithoutOut => 0.0,
    };
    let all = all_losses(batch, rig, options);
    let mut grad = Array3::zeros(batch.predictions().raw_dim());
    let mut total = 0.0;
    let mut take = |loss: Result<LossValue>, weight: f64, unit: f64| -> Result<f64> {
        match loss {
            Ok(l) => {
                let value = l.value * unit;
                if weight != 0.0 {
                    total += weight * value;
                    grad.scaled_add(weight * unit, &l.grad);
                }
                Ok(value)
            }
            Err(e) if weight != 0.0 => Err(e),
            Err(_) => Ok(f64::NAN),
        }
    };
    let components = LossBreakdown {
        l_in: take(all.l_in, weights.w_in, 1.0 / (u * u))?,
        l_proj: take(all.l_proj, weights.w_proj, 1.0)?,
        l_con: take(all.l_con, weights.w_con, 1.0 / u)?,
        l_out: take(all.l_out, w_out, 1.0 / (u * u))?,
    };
    Ok(Objective {
        total,
        components,
        grad,
    })
}
