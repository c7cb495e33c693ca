mod common;

use std::collections::BTreeMap;

use mvlift_core::data::*;
use mvlift_core::geometry::{project, triangulate_dlt, world_to_camera, PlaneFrame, Pose2D};
use mvlift_core::Error;
use nalgebra::Vector2;

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        n_samples: 40,
        seed,
        ..SynthConfig::default()
    }
}

fn pixels(points: &[(f64, f64)]) -> Pose2D {
    Pose2D::pixels(points.iter().map(|&(x, y)| Vector2::new(x, y)).collect())
}

#[test]
fn normalization_centers_and_scales() {
    let pose = pixels(&[(10.0, 20.0), (30.0, -5.0), (12.5, 21.0)]);
    let params = Norm2DParams::new(4.0).unwrap();
    let (n, origin) = normalize_2d(&pose, 0, &params).unwrap();
    assert_eq!(n.frame, PlaneFrame::Normalized);
    assert_eq!(n.landmarks[0], Vector2::zeros());
    assert_eq!(n.landmarks[1], Vector2::new(5.0, -6.25));
    assert_eq!(origin, Vector2::new(10.0, 20.0));
    let back = denormalize_2d(&n, origin, &params).unwrap();
    for (a, b) in back.landmarks.iter().zip(&pose.landmarks) {
        assert!((a - b).norm() < 1e-12);
    }
    let (unit, _) = normalize_2d(&pose, 2, &Norm2DParams::new(1.0).unwrap()).unwrap();
    assert_eq!(unit.landmarks[0], Vector2::new(-2.5, -1.0));
    assert!(Norm2DParams::new(0.0).is_err());
    assert!(normalize_2d(&n, 0, &params).is_err());
}

#[test]
fn noiseless_synthetic_detections_triangulate_to_ground_truth() {
    let data = synth_generate(&small(1)).unwrap();
    assert_eq!(data.len(), 40);
    assert_eq!(data.n_landmarks(), 16);
    for s in &data.samples {
        let obs: BTreeMap<usize, Pose2D> =
            data.rig.ids().zip(s.detections.iter().cloned()).collect();
        let tri = triangulate_dlt(&obs, &data.rig).unwrap();
        assert!(common::max_dist(&tri, s.gt_pose.as_ref().unwrap()) < 1e-6);
    }
}

#[test]
fn noiseless_detections_are_exact_projections() {
    let cfg = small(2);
    let data = synth_generate(&cfg).unwrap();
    for s in &data.samples {
        let gt = s.gt_pose.as_ref().unwrap();
        for (cam, det) in data.rig.cameras().iter().zip(&s.detections) {
            let projected = project(&world_to_camera(gt, cam).unwrap(), cam).unwrap();
            assert_eq!(projected.landmarks, det.landmarks);
            for p in &det.landmarks {
                assert!(
                    p.x >= 0.0 && p.x <= cfg.image_width && p.y >= 0.0 && p.y <= cfg.image_height
                );
            }
            let (a, _) = normalize_2d(&projected, 0, &data.normalization).unwrap();
            let (b, _) = normalize_2d(det, 0, &data.normalization).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let a = synth_generate(&small(3)).unwrap();
    let b = synth_generate(&small(3)).unwrap();
    let c = synth_generate(&small(4)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.samples, c.samples);
}

#[test]
fn bone_lengths_follow_the_table() {
    let cfg = small(5);
    let data = synth_generate(&cfg).unwrap();
    let table: Vec<f64> = cfg.joints.iter().skip(1).map(|j| j.length).collect();
    for s in &data.samples {
        let lengths = data.skeleton.bone_lengths(s.gt_pose.as_ref().unwrap());
        for (l, t) in lengths.iter().zip(&table) {
            assert!((l - t).abs() < 1e-9);
        }
    }
}

#[test]
fn noise_and_outliers_follow_the_config() {
    let clean = synth_generate(&SynthConfig {
        n_samples: 200,
        ..small(6)
    })
    .unwrap();
    let noisy = synth_generate(&SynthConfig {
        n_samples: 200,
        pixel_noise: 2.0,
        ..small(6)
    })
    .unwrap();
    // same poses and rig; noise is drawn after each pose
    let mut sq = 0.0;
    let mut count = 0.0;
    for (a, b) in clean.samples.iter().zip(&noisy.samples) {
        assert_eq!(a.gt_pose, b.gt_pose);
        for (da, db) in a.detections.iter().zip(&b.detections) {
            for (pa, pb) in da.landmarks.iter().zip(&db.landmarks) {
                sq += (pa - pb).norm_squared();
                count += 2.0;
            }
        }
    }
    let std = (sq / count).sqrt();
    assert!((std - 2.0).abs() < 0.1, "{std}");

    let outliers = synth_generate(&SynthConfig {
        outlier_rate: 1.0,
        outlier_magnitude: 30.0,
        ..small(7)
    })
    .unwrap();
    let mut moved = 0;
    for s in &outliers.samples {
        let gt = s.gt_pose.as_ref().unwrap();
        for (cam, det) in outliers.rig.cameras().iter().zip(&s.detections) {
            let truth = project(&world_to_camera(gt, cam).unwrap(), cam).unwrap();
            for (p, t) in det.landmarks.iter().zip(&truth.landmarks) {
                assert!((p.x - t.x).abs() <= 30.0 && (p.y - t.y).abs() <= 30.0);
                moved += usize::from(p != t);
            }
        }
    }
    assert!(moved > 0);
}

#[test]
fn impossible_frustum_is_a_generation_error() {
    let cfg = SynthConfig {
        n_samples: 1,
        focal_length: 20000.0,
        ..small(8)
    };
    assert!(matches!(synth_generate(&cfg), Err(Error::Generation(_))));
}

#[test]
fn synth_config_is_validated() {
    assert!(synth_generate(&SynthConfig {
        n_cameras: 1,
        ..small(0)
    })
    .is_err());
    assert!(synth_generate(&SynthConfig {
        outlier_rate: 1.5,
        ..small(0)
    })
    .is_err());
    assert!(synth_generate(&SynthConfig {
        pixel_noise: -1.0,
        ..small(0)
    })
    .is_err());
}

#[test]
fn save_load_save_is_byte_identical() {
    let data = synth_generate(&SynthConfig {
        pixel_noise: 1.5,
        ..small(9)
    })
    .unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let manifest = save_dataset(&data, a.path()).unwrap();
    let loaded = load_dataset(&manifest, false).unwrap();
    assert_eq!(loaded.rig, data.rig);
    assert_eq!(loaded.samples, data.samples);
    assert_eq!(loaded.skeleton, data.skeleton);
    save_dataset(&loaded, b.path()).unwrap();
    for f in [
        "calibration.toml",
        "detections.txt",
        "ground_truth.txt",
        "dataset.toml",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

/// Writes a two-camera dataset with a three-landmark chain and the given
/// detections body.
fn write_fixture(dir: &std::path::Path, detections: &str) -> std::path::PathBuf {
    let data = synth_generate(&SynthConfig {
        n_samples: 1,
        n_cameras: 2,
        ..small(10)
    })
    .unwrap();
    mvlift_core::geometry::write_calibration(&data.rig, &dir.join("calibration.toml")).unwrap();
    std::fs::write(dir.join("detections.txt"), detections).unwrap();
    let manifest = r#"calibration = "calibration.toml"
detections = "detections.txt"
norm_scale = 100.0

[skeleton]
names = ["root", "a", "b"]
parents = [-1, 0, 1]
root = 0
"#;
    std::fs::write(dir.join("dataset.toml"), manifest).unwrap();
    dir.join("dataset.toml")
}

#[test]
fn empty_detections_give_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_fixture(dir.path(), "");
    let data = load_dataset(&path, true).unwrap();
    assert!(data.is_empty());
    assert_eq!(data.rig.len(), 2);
}

#[test]
fn unknown_camera_is_rejected_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let body = "# mvlift-detections v1 landmarks=3\ns/0 0 1 2 3 4 5 6\ns/0 7 1 2 3 4 5 6\n";
    let path = write_fixture(dir.path(), body);
    let err = load_dataset(&path, false).unwrap_err();
    match err {
        Error::Parse { line, msg, .. } => {
            assert_eq!(line, 3);
            assert!(msg.contains("camera id 7"), "{msg}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn parse_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let body = "# mvlift-detections v1 landmarks=3\n\ns/0 0 1 2 3 4 5 6\ns/0 1 1 2 x 4 5 6\n";
    let path = write_fixture(dir.path(), body);
    assert!(matches!(
        load_dataset(&path, false),
        Err(Error::Parse { line: 4, .. })
    ));

    let body = "# mvlift-detections v1 landmarks=3\ns/0 0 1 2 3 4 5\n";
    let path = write_fixture(dir.path(), body);
    assert!(matches!(
        load_dataset(&path, false),
        Err(Error::Parse { line: 2, .. })
    ));

    let body = "# mvlift-detections v1 landmarks=4\n";
    let path = write_fixture(dir.path(), body);
    assert!(matches!(
        load_dataset(&path, false),
        Err(Error::Parse { line: 1, .. })
    ));

    let path = write_fixture(dir.path(), "s/0 0 1 2 3 4 5 6\n");
    assert!(matches!(
        load_dataset(&path, false),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn incomplete_or_corrupted_frames_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let body = "# mvlift-detections v1 landmarks=3\n\
        a/0 0 400 400 420 450 430 500\n\
        a/0 1 500 400 520 450 530 500\n\
        a/1 0 400 400 NaN 450 430 500\n\
        a/1 1 500 400 520 450 530 500\n\
        b/2 0 400 400 420 450 430 500\n\
        b/3 1 500 400 520 450 530 500 1.0 0.5 0.25\n\
        b/3 0 400 400 420 450 430 500 1.0 1.0 0.0\n";
    let path = write_fixture(dir.path(), body);
    let data = load_dataset(&path, false).unwrap();
    let ids: Vec<&str> = data.samples.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["a/0", "b/3"]);
    assert_eq!(data.skipped, ["a/1", "b/2"]);
    assert_eq!(data.samples[1].group(), "b");
    assert_eq!(
        data.samples[1].detections[1].confidence,
        Some(vec![1.0, 0.5, 0.25])
    );
}

#[test]
fn duplicate_views_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let body = "# mvlift-detections v1 landmarks=3\ns 0 1 2 3 4 5 6\ns 0 1 2 3 4 5 6\n";
    let path = write_fixture(dir.path(), body);
    assert!(matches!(
        load_dataset(&path, false),
        Err(Error::Parse { line: 3, .. })
    ));
}

#[test]
fn cached_triangulations_match_recomputation() {
    let mut data = synth_generate(&SynthConfig {
        pixel_noise: 3.0,
        ..small(11)
    })
    .unwrap();
    data.triangulate().unwrap();
    assert!(data.verify_triangulations().unwrap() < 1e-9);
    data.samples[3].triangulation.as_mut().unwrap().landmarks[2].x += 1.0;
    assert!(data.verify_triangulations().unwrap() > 0.5);
}

#[test]
fn split_keeps_order_and_rig() {
    let data = synth_generate(&small(12)).unwrap();
    let (a, b) = data.split_at(30).unwrap();
    assert_eq!(a.len(), 30);
    assert_eq!(b.len(), 10);
    assert_eq!(b.samples[0], data.samples[30]);
    assert_eq!(a.rig, b.rig);
    assert!(data.split_at(41).is_err());
}

#[test]
fn skeleton_validation() {
    let names = |n: usize| (0..n).map(|i| format!("j{i}")).collect::<Vec<_>>();
    assert!(Skeleton::new(names(3), vec![None, Some(0), Some(1)], 0).is_ok());
    assert!(Skeleton::new(names(3), vec![None, Some(2), Some(1)], 0).is_err());
    assert!(Skeleton::new(names(3), vec![None, None, Some(1)], 0).is_err());
    assert!(Skeleton::new(names(3), vec![Some(1), Some(0), Some(1)], 0).is_err());
    assert!(Skeleton::new(names(2), vec![None, Some(0), Some(0)], 0).is_err());
}

#[test]
fn pose_files_round_trip() {
    let data = synth_generate(&small(13)).unwrap();
    let poses: Vec<(&str, &mvlift_core::Pose3D)> = data
        .samples
        .iter()
        .map(|s| (s.id.as_str(), s.gt_pose.as_ref().unwrap()))
        .collect();
    let text = format_poses(16, poses.iter().copied()).unwrap();
    let (n, records) = parse_poses(&text, std::path::Path::new("p.txt")).unwrap();
    assert_eq!(n, Some(16));
    for (r, (id, p)) in records.iter().zip(&poses) {
        assert_eq!(r.id, *id);
        assert_eq!(&r.landmarks, &p.landmarks);
    }
    assert!(format_poses(16, [("bad id", poses[0].1)]).is_err());
}
