mod common;

use std::collections::BTreeMap;

use common::*;
use mvlift_core::geometry::{
    camera_to_camera, camera_to_world, project, root_center, root_restore, triangulate_dlt,
    world_to_camera, CameraRig, CameraView, Frame, Pose2D, Pose3D,
};
use mvlift_core::Error;
use nalgebra::{Matrix3, Vector2, Vector3, Vector4};
use proptest::prelude::*;

fn observe(pose: &Pose3D, rig: &CameraRig) -> BTreeMap<usize, Pose2D> {
    rig.cameras()
        .iter()
        .map(|cam| {
            (
                cam.id(),
                project(&world_to_camera(pose, cam).unwrap(), cam).unwrap(),
            )
        })
        .collect()
}

#[test]
fn camera_center_maps_to_origin() {
    let mut rng = rng(1);
    let cam = random_camera(0, &mut rng);
    let center = Pose3D::world(vec![cam.center()]);
    let out = world_to_camera(&center, &cam).unwrap();
    assert!(out.landmarks[0].norm() < 1e-9);
    assert_eq!(out.frame, Frame::Camera(0));
}

#[test]
fn identity_extrinsics_leave_pose_unchanged() {
    let cam = CameraView::new(
        3,
        Matrix3::identity(),
        Matrix3::identity(),
        Vector3::zeros(),
    )
    .unwrap();
    let pose = random_skeleton(16, &mut rng(2));
    let out = world_to_camera(&pose, &cam).unwrap();
    assert_eq!(out.landmarks, pose.landmarks);
}

#[test]
fn world_to_camera_matches_homogeneous_oracle() {
    let mut rng = rng(3);
    for _ in 0..200 {
        let cam = random_camera(0, &mut rng);
        let pose = random_skeleton(16, &mut rng);
        let h = homogeneous(&cam);
        let out = world_to_camera(&pose, &cam).unwrap();
        for (x, y) in pose.landmarks.iter().zip(&out.landmarks) {
            let oracle = h * Vector4::new(x.x, x.y, x.z, 1.0);
            assert!((oracle.xyz() - y).amax() < 1e-12 * (1.0 + oracle.amax()));
        }
        let back = camera_to_world(&out, &cam).unwrap();
        assert!(max_dist(&back, &pose) < 1e-9);
    }
}

#[test]
fn camera_to_camera_matches_composed_oracle() {
    let mut rng = rng(4);
    for _ in 0..200 {
        let a = random_camera(0, &mut rng);
        let b = random_camera(1, &mut rng);
        let pose_a = world_to_camera(&random_skeleton(16, &mut rng), &a).unwrap();
        let composed = homogeneous(&b) * homogeneous(&a).try_inverse().unwrap();
        let out = camera_to_camera(&pose_a, &a, &b).unwrap();
        assert_eq!(out.frame, Frame::Camera(1));
        for (x, y) in pose_a.landmarks.iter().zip(&out.landmarks) {
            let oracle = composed * Vector4::new(x.x, x.y, x.z, 1.0);
            assert!((oracle.xyz() - y).amax() < 1e-9);
        }
        let same = camera_to_camera(&pose_a, &a, &a).unwrap();
        assert!(max_dist(&same, &pose_a) < 1e-9);
        let round = camera_to_camera(&out, &b, &a).unwrap();
        assert!(max_dist(&round, &pose_a) < 1e-9);
    }
}

#[test]
fn frame_mismatch_is_a_contract_violation() {
    let mut rng = rng(5);
    let a = random_camera(0, &mut rng);
    let b = random_camera(1, &mut rng);
    let pose = random_skeleton(4, &mut rng);
    let in_a = world_to_camera(&pose, &a).unwrap();
    assert!(matches!(
        world_to_camera(&in_a, &a),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        camera_to_camera(&in_a, &b, &a),
        Err(Error::Contract(_))
    ));
    assert!(matches!(project(&in_a, &b), Err(Error::Contract(_))));
    let (centered, _) = root_center(&pose, 0).unwrap();
    assert!(matches!(
        world_to_camera(&centered, &a),
        Err(Error::Contract(_))
    ));
}

#[test]
fn optical_axis_projects_to_principal_point() {
    let mut rng = rng(6);
    let cam = random_camera(0, &mut rng);
    let pose = Pose3D {
        landmarks: vec![Vector3::new(0.0, 0.0, 2500.0)],
        frame: Frame::Camera(0),
        root_relative: false,
    };
    let px = project(&pose, &cam).unwrap().landmarks[0];
    let k = cam.intrinsics();
    assert!((px - Vector2::new(k[(0, 2)], k[(1, 2)])).amax() < 1e-9);
}

#[test]
fn projection_matches_projection_matrix_oracle() {
    let mut rng = rng(7);
    for _ in 0..200 {
        let cam = random_camera(0, &mut rng);
        let pose = random_skeleton(16, &mut rng);
        let px = project(&world_to_camera(&pose, &cam).unwrap(), &cam).unwrap();
        let p = cam.projection_matrix();
        for (x, y) in pose.landmarks.iter().zip(&px.landmarks) {
            let h = p * Vector4::new(x.x, x.y, x.z, 1.0);
            let oracle = Vector2::new(h.x / h.z, h.y / h.z);
            assert!((oracle - y).amax() < 1e-9, "{oracle} vs {y}");
        }
    }
}

#[test]
fn projection_rejects_points_behind_the_camera() {
    let cam = CameraView::new(
        0,
        Matrix3::identity(),
        Matrix3::identity(),
        Vector3::zeros(),
    )
    .unwrap();
    let pose = Pose3D {
        landmarks: vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 1e-7)],
        frame: Frame::Camera(0),
        root_relative: false,
    };
    match project(&pose, &cam) {
        Err(Error::DegenerateDepth { landmark, .. }) => assert_eq!(landmark, 1),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn dlt_recovers_noiseless_skeletons() {
    let mut rng = rng(8);
    for c in [2, 4] {
        for _ in 0..50 {
            let rig = random_rig(c, &mut rng);
            let pose = random_skeleton(16, &mut rng);
            let out = triangulate_dlt(&observe(&pose, &rig), &rig).unwrap();
            assert!(
                max_dist(&out, &pose) < 1e-6,
                "C={c}: {}",
                max_dist(&out, &pose)
            );
        }
    }
}

#[test]
fn dlt_needs_two_views() {
    let mut rng = rng(9);
    let rig = random_rig(3, &mut rng);
    let mut obs = observe(&random_skeleton(5, &mut rng), &rig);
    obs.retain(|id, _| *id == 0);
    assert!(matches!(
        triangulate_dlt(&obs, &rig),
        Err(Error::InsufficientViews(1))
    ));
}

#[test]
fn dlt_rejects_unknown_camera() {
    let mut rng = rng(10);
    let rig = random_rig(2, &mut rng);
    let mut obs = observe(&random_skeleton(5, &mut rng), &rig);
    let extra = obs[&0].clone();
    obs.insert(17, extra);
    assert!(matches!(
        triangulate_dlt(&obs, &rig),
        Err(Error::UnknownCamera(17))
    ));
}

/// Parallel stereo pair at x = ±b with identical intrinsics. A point on the
/// z axis seen with symmetric ±σ pixel noise triangulates to x = 0 at the
/// depth given by the perturbed disparity.
#[test]
fn dlt_symmetric_stereo_noise_matches_closed_form() {
    let f = 1000.0;
    let (cx, cy) = (500.0, 400.0);
    let k = Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);
    let b = 300.0;
    let left = CameraView::new(0, k, Matrix3::identity(), Vector3::new(b, 0.0, 0.0)).unwrap();
    let right = CameraView::new(1, k, Matrix3::identity(), Vector3::new(-b, 0.0, 0.0)).unwrap();
    let rig = CameraRig::new(vec![left, right], "mm").unwrap();
    for &(depth, sigma) in &[(4000.0, 0.5), (3000.0, 2.0), (6000.0, 1.0)] {
        let truth = Pose3D::world(vec![Vector3::new(0.0, 0.0, depth)]);
        let mut obs = observe(&truth, &rig);
        obs.get_mut(&0).unwrap().landmarks[0].x += sigma;
        obs.get_mut(&1).unwrap().landmarks[0].x -= sigma;
        let out = triangulate_dlt(&obs, &rig).unwrap().landmarks[0];
        let disparity = 2.0 * f * b / depth + 2.0 * sigma;
        let expected = 2.0 * f * b / disparity;
        assert!(out.x.abs() < 1e-9, "midpoint x = {}", out.x);
        assert!(out.y.abs() < 1e-9);
        assert!((out.z - expected).abs() < 1e-6, "{} vs {}", out.z, expected);
        assert!((out.z - depth).abs() <= depth * depth * sigma / (f * b));
    }
}

#[test]
fn root_center_round_trip() {
    let mut rng = rng(11);
    let pose = random_skeleton(16, &mut rng);
    let (centered, root) = root_center(&pose, 3).unwrap();
    assert!(centered.root_relative);
    assert_eq!(centered.landmarks[3], Vector3::zeros());
    let back = root_restore(&centered, root);
    assert!(max_dist(&back, &pose) < 1e-12);

    let mut at_origin = pose.clone();
    let shift = at_origin.landmarks[0];
    at_origin.landmarks.iter_mut().for_each(|p| *p -= shift);
    at_origin.landmarks[0] = Vector3::zeros();
    let (same, root) = root_center(&at_origin, 0).unwrap();
    assert_eq!(root, Vector3::zeros());
    assert_eq!(same.landmarks, at_origin.landmarks);
}

#[test]
fn rig_validation() {
    let mut rng = rng(12);
    let a = random_camera(0, &mut rng);
    assert!(CameraRig::new(vec![a.clone()], "mm").is_err());
    assert!(CameraRig::new(vec![a.clone(), a.clone()], "mm").is_err());
    let same_p = CameraView::new(1, *a.intrinsics(), *a.rotation(), *a.translation()).unwrap();
    assert!(matches!(
        CameraRig::new(vec![a, same_p], "mm"),
        Err(Error::InvalidRig(_))
    ));
    let bad_k = Matrix3::new(1.0, 0.0, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 1.0);
    assert!(CameraView::new(0, bad_k, Matrix3::identity(), Vector3::zeros()).is_err());
    let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
    assert!(CameraView::new(0, Matrix3::identity(), reflect, Vector3::zeros()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dlt_is_invariant_to_camera_labelling(seed in any::<u64>(), c in 2usize..6) {
        let mut rng = rng(seed);
        let rig = random_rig(c, &mut rng);
        let pose = random_skeleton(8, &mut rng);
        let mut noisy = observe(&pose, &rig);
        for p in noisy.values_mut() {
            for l in &mut p.landmarks {
                *l += Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            }
        }
        let base = triangulate_dlt(&noisy, &rig).unwrap();
        // relabel cameras in reverse so the rows are stacked in another order
        let cams: Vec<CameraView> = rig.cameras().iter().map(|cam| {
            CameraView::new(c - 1 - cam.id(), *cam.intrinsics(), *cam.rotation(), *cam.translation()).unwrap()
        }).rev().collect();
        let relabeled = CameraRig::new(cams, "mm").unwrap();
        let obs: BTreeMap<usize, Pose2D> = noisy.into_iter().map(|(id, p)| (c - 1 - id, p)).collect();
        let other = triangulate_dlt(&obs, &relabeled).unwrap();
        prop_assert!(max_dist(&base, &other) < 1e-9, "{}", max_dist(&base, &other));
    }

    #[test]
    fn projection_is_scale_invariant(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let mut rng = rng(seed);
        let cam = random_camera(0, &mut rng);
        let pose = world_to_camera(&random_skeleton(8, &mut rng), &cam).unwrap();
        let mut scaled = pose.clone();
        scaled.landmarks.iter_mut().for_each(|p| *p *= scale);
        let a = project(&pose, &cam).unwrap();
        let b = project(&scaled, &cam).unwrap();
        for (p, q) in a.landmarks.iter().zip(&b.landmarks) {
            prop_assert!((p - q).amax() < 1e-9);
        }
    }

    #[test]
    fn transform_chain_equals_direct(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let (a, b, c) = (random_camera(0, &mut rng), random_camera(1, &mut rng), random_camera(2, &mut rng));
        let pose = random_skeleton(8, &mut rng);
        let via = camera_to_camera(&world_to_camera(&pose, &a).unwrap(), &a, &b).unwrap();
        let direct = world_to_camera(&pose, &b).unwrap();
        prop_assert!(max_dist(&via, &direct) < 1e-9);
        let via_c = camera_to_camera(&via, &b, &c).unwrap();
        prop_assert!(max_dist(&via_c, &world_to_camera(&pose, &c).unwrap()) < 1e-9);
    }
}

use rand::Rng;
