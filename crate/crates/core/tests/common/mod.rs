#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvlift_core::geometry::{CameraRig, CameraView, Pose3D};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_intrinsics(rng: &mut impl Rng) -> Matrix3<f64> {
    let f = rng.random_range(700.0..1500.0);
    Matrix3::new(
        f,
        rng.random_range(-2.0..2.0),
        rng.random_range(400.0..600.0),
        0.0,
        f * rng.random_range(0.95..1.05),
        rng.random_range(400.0..600.0),
        0.0,
        0.0,
        1.0,
    )
}

/// Camera on a sphere of radius 3–6 m around the origin, looking roughly at it.
pub fn random_camera(id: usize, rng: &mut impl Rng) -> CameraView {
    let azimuth: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let elevation: f64 = rng.random_range(-0.4..0.6);
    let radius = rng.random_range(3000.0..6000.0);
    let eye = Vector3::new(
        radius * elevation.cos() * azimuth.cos(),
        radius * elevation.cos() * azimuth.sin(),
        radius * elevation.sin(),
    );
    let target = Vector3::new(
        rng.random_range(-100.0..100.0),
        rng.random_range(-100.0..100.0),
        rng.random_range(-100.0..100.0),
    );
    CameraView::look_at(id, random_intrinsics(rng), eye, target, Vector3::z()).unwrap()
}

/// Rig whose cameras are spread in azimuth so every pair has a baseline.
pub fn random_rig(n: usize, rng: &mut impl Rng) -> CameraRig {
    let offset = rng.random_range(0.0..std::f64::consts::TAU);
    let cams = (0..n)
        .map(|i| {
            let azimuth =
                offset + std::f64::consts::TAU * i as f64 / n as f64 + rng.random_range(-0.3..0.3);
            let elevation: f64 = rng.random_range(-0.2..0.5);
            let radius = rng.random_range(3000.0..6000.0);
            let eye = Vector3::new(
                radius * elevation.cos() * azimuth.cos(),
                radius * elevation.cos() * azimuth.sin(),
                radius * elevation.sin(),
            );
            CameraView::look_at(
                i,
                random_intrinsics(rng),
                eye,
                Vector3::zeros(),
                Vector3::z(),
            )
            .unwrap()
        })
        .collect();
    CameraRig::new(cams, "mm").unwrap()
}

/// Random point cloud shaped like a standing person around the origin.
pub fn random_skeleton(n: usize, rng: &mut impl Rng) -> Pose3D {
    Pose3D::world(
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-400.0..400.0),
                    rng.random_range(-400.0..400.0),
                    rng.random_range(-900.0..900.0),
                )
            })
            .collect(),
    )
}

pub fn homogeneous(cam: &CameraView) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(cam.rotation());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(cam.translation());
    m
}

pub fn max_dist(a: &Pose3D, b: &Pose3D) -> f64 {
    a.landmarks
        .iter()
        .zip(&b.landmarks)
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max)
}

use std::collections::BTreeMap;

use mvlift_core::geometry::{project, root_center, triangulate_dlt, world_to_camera, Pose2D};
use mvlift_core::losses::{MultiViewBatch, MultiViewSample};
use nalgebra::Vector2;
use ndarray::Array3;

pub const NORM_SCALE: f64 = 250.0;

/// Batch whose detections are exact (plus `pixel_noise`) projections of
/// random skeletons and whose predictions are the camera-frame, root-centered
/// triangulations perturbed by `pred_noise` world units.
pub fn random_batch(
    rig: &CameraRig,
    samples: usize,
    n: usize,
    pixel_noise: f64,
    pred_noise: f64,
    rng: &mut impl Rng,
) -> MultiViewBatch {
    let c_count = rig.len();
    let mut predictions = Array3::zeros((samples, c_count, 3 * n));
    let mut out = Vec::new();
    for s in 0..samples {
        let gt = random_skeleton(n, rng);
        let mut px: BTreeMap<usize, Pose2D> = BTreeMap::new();
        for cam in rig.cameras() {
            let mut p = project(&world_to_camera(&gt, cam).unwrap(), cam).unwrap();
            for l in &mut p.landmarks {
                *l += Vector2::new(
                    rng.random_range(-pixel_noise..=pixel_noise),
                    rng.random_range(-pixel_noise..=pixel_noise),
                );
            }
            px.insert(cam.id(), p);
        }
        let tri = triangulate_dlt(&px, rig).unwrap();
        let mut detections = Vec::new();
        let mut origins = Vec::new();
        for (c, cam) in rig.cameras().iter().enumerate() {
            let p = &px[&cam.id()];
            let origin = p.landmarks[0];
            detections.push(Pose2D {
                landmarks: p
                    .landmarks
                    .iter()
                    .map(|l| (l - origin) / NORM_SCALE)
                    .collect(),
                confidence: None,
                frame: mvlift_core::geometry::PlaneFrame::Normalized,
            });
            origins.push(origin);
            let (label, _) = root_center(&world_to_camera(&tri, cam).unwrap(), 0).unwrap();
            for i in 0..n {
                for k in 0..3 {
                    let noise = if i == 0 {
                        0.0
                    } else {
                        rng.random_range(-pred_noise..=pred_noise)
                    };
                    predictions[[s, c, 3 * i + k]] = label.landmarks[i][k] + noise;
                }
            }
        }
        out.push(MultiViewSample {
            detections,
            origins,
            input_triangulation: Some(tri),
            anchors: None,
        });
    }
    MultiViewBatch::new(rig, rig.ids().collect(), n, 0, NORM_SCALE, out, predictions).unwrap()
}

/// Max element-wise relative error, skipping entries where both values are
/// below `tiny`.
pub fn max_relative_error<'a>(
    analytic: impl IntoIterator<Item = &'a f64>,
    numeric: impl IntoIterator<Item = &'a f64>,
    tiny: f64,
) -> f64 {
    analytic
        .into_iter()
        .zip(numeric)
        .filter(|(a, n)| a.abs() >= tiny || n.abs() >= tiny)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}
