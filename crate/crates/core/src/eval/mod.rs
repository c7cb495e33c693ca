//! Pose metrics: MPJPE, Procrustes-aligned MPJPE, 3DPCK and its AUC.

mod report;

pub use report::{
    evaluate_pairs, format_report, EvalConfig, EvalReport, PairAlignment, ReportRow, REPORT_HEADER,
};

use nalgebra::{Matrix3, Vector3};

use crate::geometry::{root_center, Pose3D};
use crate::{Error, Result};

pub const PCK_THRESHOLD: f64 = 150.0;
pub const AUC_STEPS: usize = 31;

fn check_pair(pred: &Pose3D, gt: &Pose3D) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LandmarkCount {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("pose"));
    }
    if pred.root_relative != gt.root_relative {
        return Err(Error::contract(
            "cannot compare a root-relative pose with an absolute one",
        ));
    }
    Ok(())
}

/// Mean Euclidean landmark distance.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    check_pair(pred, gt)?;
    let total: f64 = pred
        .landmarks
        .iter()
        .zip(&gt.landmarks)
        .map(|(p, g)| (p - g).norm())
        .sum();
    Ok(total / pred.len() as f64)
}

/// Similarity transform taking `pred` onto `gt`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
    /// `scale · rotation · pred + translation`, in the frame of `gt`.
    pub aligned_pose: Pose3D,
}

/// Least-squares similarity alignment of `pred` to `gt` (rotation without
/// reflection, uniform scale, translation).
pub fn procrustes_align(pred: &Pose3D, gt: &Pose3D) -> Result<AlignmentResult> {
    check_pair(pred, gt)?;
    let n = pred.len();
    if n < 3 {
        return Err(Error::DegenerateAlignment(format!(
            "need at least 3 landmarks, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mu_p = pred.landmarks.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_g = gt.landmarks.iter().sum::<Vector3<f64>>() * inv_n;
    let mut cross = Matrix3::zeros();
    let mut pred_cov = Matrix3::zeros();
    let mut var_p = 0.0;
    let mut var_g = 0.0;
    for (p, g) in pred.landmarks.iter().zip(&gt.landmarks) {
        let x = p - mu_p;
        let y = g - mu_g;
        cross += y * x.transpose();
        pred_cov += x * x.transpose();
        var_p += x.norm_squared();
        var_g += y.norm_squared();
    }
    if !(var_g > 0.0) {
        return Err(Error::DegenerateAlignment(
            "ground-truth landmarks coincide".into(),
        ));
    }
    let mut spread = pred_cov.symmetric_eigenvalues().as_slice().to_vec();
    spread.sort_by(|a, b| b.total_cmp(a));
    if !(spread[0] > 0.0) || spread[1] <= 1e-12 * spread[0] {
        return Err(Error::DegenerateAlignment(
            "predicted landmarks are collinear or coincide".into(),
        ));
    }
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
    let scale = trace / var_p;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::DegenerateAlignment(format!(
            "non-positive scale {scale}"
        )));
    }
    let translation = mu_g - scale * rotation * mu_p;
    let aligned_pose = Pose3D {
        landmarks: pred
            .landmarks
            .iter()
            .map(|p| scale * rotation * p + translation)
            .collect(),
        frame: gt.frame,
        root_relative: gt.root_relative,
    };
    Ok(AlignmentResult {
        rotation,
        scale,
        translation,
        aligned_pose,
    })
}

/// MPJPE after Procrustes alignment.
pub fn p_mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    mpjpe(&procrustes_align(pred, gt)?.aligned_pose, gt)
}

/// Both poses translated so their `root` landmark sits at the origin.
/// Poses already marked root-relative are taken as they are.
pub fn root_aligned(pred: &Pose3D, gt: &Pose3D, root: usize) -> Result<(Pose3D, Pose3D)> {
    check_pair(pred, gt)?;
    let center = |p: &Pose3D| -> Result<Pose3D> {
        if p.root_relative {
            Ok(p.clone())
        } else {
            Ok(root_center(p, root)?.0)
        }
    };
    Ok((center(pred)?, center(gt)?))
}

fn check_set(preds: &[Pose3D], gts: &[Pose3D]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Empty("pose set"));
    }
    if preds.len() != gts.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    preds
        .iter()
        .zip(gts)
        .try_for_each(|(p, g)| check_pair(p, g))
}

/// Fraction of landmarks within `threshold` (inclusive) of the ground truth.
/// Poses are compared as given; align them first.
pub fn pck3d(preds: &[Pose3D], gts: &[Pose3D], threshold: f64) -> Result<f64> {
    check_set(preds, gts)?;
    Ok(pck_of(&distances(preds, gts), threshold))
}

fn distances(preds: &[Pose3D], gts: &[Pose3D]) -> Vec<f64> {
    preds
        .iter()
        .zip(gts)
        .flat_map(|(p, g)| {
            p.landmarks
                .iter()
                .zip(&g.landmarks)
                .map(|(a, b)| (a - b).norm())
        })
        .collect()
}

fn pck_of(distances: &[f64], threshold: f64) -> f64 {
    distances.iter().filter(|d| **d <= threshold).count() as f64 / distances.len() as f64
}

/// `steps` evenly spaced thresholds from 0 to `max` inclusive.
pub fn auc_grid(max: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![max],
        _ => (0..steps)
            .map(|i| max * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

/// Mean [`pck3d`] over `thresholds`.
pub fn auc(preds: &[Pose3D], gts: &[Pose3D], thresholds: &[f64]) -> Result<f64> {
    check_set(preds, gts)?;
    if thresholds.is_empty() {
        return Err(Error::Empty("threshold grid"));
    }
    let d = distances(preds, gts);
    Ok(thresholds.iter().map(|t| pck_of(&d, *t)).sum::<f64>() / thresholds.len() as f64)
}
