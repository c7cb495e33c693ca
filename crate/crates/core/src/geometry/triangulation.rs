use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3x4, Matrix4, Vector2, Vector3, Vector4};

use super::{CameraId, CameraRig, Frame, Pose2D, Pose3D};
use crate::{Error, Result};

/// Homogeneous solutions with `|w|` below this are points at infinity.
const MIN_HOMOGENEOUS_W: f64 = 1e-12;

/// One camera's contribution to the triangulation of a landmark.
///
/// `centroid` and `scale` define the Hartley conditioning `x' = scale·(x − centroid)`
/// applied to this view, computed once per view from all its landmarks.
#[derive(Debug, Clone, Copy)]
pub struct DltView<'a> {
    pub projection: &'a Matrix3x4<f64>,
    pub point: Vector2<f64>,
    pub centroid: Vector2<f64>,
    pub scale: f64,
}

/// Hartley conditioning for one view: centroid of the landmarks and the
/// scale that brings their mean distance from it to `√2`.
pub fn conditioning_scale(pose: &Pose2D) -> (Vector2<f64>, f64) {
    let n = pose.landmarks.len().max(1) as f64;
    let centroid = pose
        .landmarks
        .iter()
        .fold(Vector2::zeros(), |acc, p| acc + p)
        / n;
    let mean_dist = pose
        .landmarks
        .iter()
        .map(|p| (p - centroid).norm())
        .sum::<f64>()
        / n;
    let scale = if mean_dist > 1e-12 * (1.0 + centroid.norm()) {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    (centroid, scale)
}

struct Solved {
    system: DMatrix<f64>,
    /// right singular vectors as columns, in descending singular-value order
    basis: [Vector4<f64>; 4],
    sigma: [f64; 4],
}

impl Solved {
    fn null(&self) -> &Vector4<f64> {
        &self.basis[3]
    }
}

/// Similarity conditioning of world space, `X = scale·X' + center`, taken
/// from the optical centers of the participating cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldConditioning {
    pub center: Vector3<f64>,
    pub scale: f64,
}

impl WorldConditioning {
    pub fn identity() -> Self {
        Self {
            center: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn from_projections<'a>(projections: impl IntoIterator<Item = &'a Matrix3x4<f64>>) -> Self {
        let centers: Vec<Vector3<f64>> = projections
            .into_iter()
            .filter_map(|p| {
                let m = p.fixed_view::<3, 3>(0, 0).into_owned();
                m.try_inverse().map(|inv| -(inv * p.column(3)))
            })
            .collect();
        if centers.is_empty() {
            return Self::identity();
        }
        let center = centers.iter().fold(Vector3::zeros(), |acc, c| acc + c) / centers.len() as f64;
        let spread =
            centers.iter().map(|c| (c - center).norm()).sum::<f64>() / centers.len() as f64;
        let scale = if spread > 1e-12 { spread } else { 1.0 };
        Self { center, scale }
    }

    /// `P·H` where `H` maps conditioned to world coordinates.
    fn apply(&self, p: &Matrix3x4<f64>) -> Matrix3x4<f64> {
        let mut h = Matrix4::identity() * self.scale;
        h[(3, 3)] = 1.0;
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.center);
        p * h
    }
}

fn build_system(views: &[DltView<'_>], world: &WorldConditioning) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(2 * views.len(), 4);
    for (i, view) in views.iter().enumerate() {
        let p = &world.apply(view.projection);
        let s = view.scale;
        // rows of T·P where T = [[s, 0, -s·cx], [0, s, -s·cy], [0, 0, 1]]
        let p3 = p.row(2);
        let p1 = (p.row(0) - p3 * view.centroid.x) * s;
        let p2 = (p.row(1) - p3 * view.centroid.y) * s;
        let x = (view.point - view.centroid) * s;
        a.row_mut(2 * i).copy_from(&(p3 * x.x - p1));
        a.row_mut(2 * i + 1).copy_from(&(p3 * x.y - p2));
    }
    a
}

fn solve(views: &[DltView<'_>], world: &WorldConditioning) -> Solved {
    let system = build_system(views, world);
    let svd = system.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    // stable: ties keep the decomposition's own order
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut basis = [Vector4::zeros(); 4];
    let mut sigma = [0.0; 4];
    for (slot, &k) in order.iter().enumerate() {
        let row = v_t.row(k);
        let mut v = Vector4::new(row[0], row[1], row[2], row[3]);
        // sign convention: first non-zero component positive
        if let Some(first) = v.iter().copied().find(|c| *c != 0.0) {
            if first < 0.0 {
                v = -v;
            }
        }
        basis[slot] = v;
        sigma[slot] = svd.singular_values[k];
    }
    Solved {
        system,
        basis,
        sigma,
    }
}

/// Conditioned homogeneous solution to a world point.
fn dehomogenize(
    v: &Vector4<f64>,
    world: &WorldConditioning,
    landmark: usize,
) -> Result<Vector3<f64>> {
    if v.w.abs() < MIN_HOMOGENEOUS_W {
        return Err(Error::PointAtInfinity(landmark));
    }
    Ok(v.xyz() / v.w * world.scale + world.center)
}

/// Triangulates one landmark from two or more views. `landmark` only labels
/// errors.
pub fn triangulate_landmark(
    views: &[DltView<'_>],
    world: &WorldConditioning,
    landmark: usize,
) -> Result<Vector3<f64>> {
    if views.len() < 2 {
        return Err(Error::InsufficientViews(views.len()));
    }
    dehomogenize(solve(views, world).null(), world, landmark)
}

/// Triangulated landmark together with `∂X/∂u_c` and `∂X/∂v_c` for every
/// view, with the per-view conditioning held constant.
///
/// The derivative of the null vector follows first-order perturbation of
/// the eigenvectors of `AᵀA`.
pub fn triangulate_landmark_jacobian(
    views: &[DltView<'_>],
    world: &WorldConditioning,
    landmark: usize,
) -> Result<(Vector3<f64>, Vec<[Vector3<f64>; 2]>)> {
    if views.len() < 2 {
        return Err(Error::InsufficientViews(views.len()));
    }
    let solved = solve(views, world);
    let null = *solved.null();
    let point = dehomogenize(&null, world, landmark)?;
    // conditioned point, the quantity the null vector parametrizes
    let local = null.xyz() / null.w;
    let a = &solved.system;
    let project = |v: &Vector4<f64>| -> Vec<f64> { (a * v).iter().copied().collect() };
    let a_basis: Vec<Vec<f64>> = solved.basis.iter().map(project).collect();
    let sigma_k = solved.sigma[3];

    let mut jac = Vec::with_capacity(views.len());
    for (c, view) in views.iter().enumerate() {
        let p3 = world.apply(view.projection).row(2).transpose() * view.scale;
        let mut pair = [Vector3::zeros(); 2];
        for (axis, slot) in pair.iter_mut().enumerate() {
            let row = 2 * c + axis;
            // dA = e_row · p3ᵀ
            let g_null = p3.dot(&null);
            let mut dv = Vector4::zeros();
            for j in 0..3 {
                let gap = sigma_k * sigma_k - solved.sigma[j] * solved.sigma[j];
                if gap.abs() < 1e-300 {
                    continue;
                }
                let vj = &solved.basis[j];
                let coupling = p3.dot(vj) * a_basis[3][row] + a_basis[j][row] * g_null;
                dv += vj * (coupling / gap);
            }
            *slot = (dv.xyz() - local * dv.w) / null.w * world.scale;
        }
        jac.push(pair);
    }
    Ok((point, jac))
}

fn triangulate_views(views: &[(&Matrix3x4<f64>, &Pose2D)]) -> Result<Pose3D> {
    if views.len() < 2 {
        return Err(Error::InsufficientViews(views.len()));
    }
    let n = views[0].1.len();
    for (_, pose) in views {
        if pose.len() != n {
            return Err(Error::LandmarkCount {
                expected: n,
                got: pose.len(),
            });
        }
    }
    let conditioning: Vec<_> = views
        .iter()
        .map(|(_, pose)| conditioning_scale(pose))
        .collect();
    let world = WorldConditioning::from_projections(views.iter().map(|(p, _)| *p));
    let mut landmarks = Vec::with_capacity(n);
    let mut scratch = Vec::with_capacity(views.len());
    for i in 0..n {
        scratch.clear();
        for ((p, pose), (centroid, scale)) in views.iter().zip(&conditioning) {
            scratch.push(DltView {
                projection: p,
                point: pose.landmarks[i],
                centroid: *centroid,
                scale: *scale,
            });
        }
        landmarks.push(triangulate_landmark(&scratch, &world, i)?);
    }
    Ok(Pose3D::world(landmarks))
}

/// DLT triangulation of a full pose from per-camera detections.
///
/// Views are processed in camera-id order, so the result does not depend on
/// how the map was filled.
pub fn triangulate_dlt(
    observations: &BTreeMap<CameraId, Pose2D>,
    rig: &CameraRig,
) -> Result<Pose3D> {
    if observations.len() < 2 {
        return Err(Error::InsufficientViews(observations.len()));
    }
    let views = observations
        .iter()
        .map(|(id, pose)| Ok((rig.camera(*id)?.projection_matrix(), pose)))
        .collect::<Result<Vec<_>>>()?;
    let pose = triangulate_views(&views)?;
    debug_assert_eq!(pose.frame, Frame::World);
    Ok(pose)
}

/// Same as [`triangulate_dlt`] over an explicit list of views.
pub(crate) fn triangulate_list(views: &[(&Matrix3x4<f64>, &Pose2D)]) -> Result<Pose3D> {
    triangulate_views(views)
}
