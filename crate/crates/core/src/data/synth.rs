//! Synthetic rig: a 16-landmark articulated skeleton seen by cameras on a
//! ring. World `z` points up; units are millimetres.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Norm2DParams, RigSample, Skeleton};
use crate::geometry::{world_to_camera, CameraRig, CameraView, PlaneFrame, Pose2D, Pose3D};
use crate::{Error, Result};

const MAX_ATTEMPTS: usize = 1000;

/// One landmark of the kinematic tree. The bone from `parent` has length
/// `length` along `direction` (body frame: `x` left, `y` forward, `z` up)
/// before the joint rotation, whose Euler angles about x, y and z are drawn
/// uniformly from `angle_ranges` (radians, `[min, max]` per axis). Rotations
/// compose down the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    #[serde(default)]
    pub parent: Option<usize>,
    #[serde(default)]
    pub length: f64,
    #[serde(default)]
    pub direction: [f64; 3],
    #[serde(default)]
    pub angle_ranges: [[f64; 2]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_cameras: usize,
    /// Root first; parents must precede their children.
    pub joints: Vec<JointSpec>,
    pub root_height: f64,
    /// Root offset drawn uniformly within `±position_range` in x and y.
    pub position_range: f64,
    /// Body yaw drawn uniformly within `±yaw_range`.
    pub yaw_range: f64,
    pub ring_radius: f64,
    pub camera_height: f64,
    pub height_jitter: f64,
    pub focal_length: f64,
    pub image_width: f64,
    pub image_height: f64,
    /// Std. dev. of Gaussian pixel noise per coordinate.
    pub pixel_noise: f64,
    /// Probability that a landmark in a view is replaced by an outlier.
    pub outlier_rate: f64,
    /// Outliers land uniformly within `±outlier_magnitude` pixels of the truth.
    pub outlier_magnitude: f64,
    pub norm_scale: f64,
    pub seed: u64,
}

fn joint(
    name: &str,
    parent: usize,
    length: f64,
    direction: [f64; 3],
    angle_ranges: [[f64; 2]; 3],
) -> JointSpec {
    JointSpec {
        name: name.into(),
        parent: Some(parent),
        length,
        direction,
        angle_ranges,
    }
}

const RIGID: [[f64; 2]; 3] = [[0.0; 2]; 3];

impl SynthConfig {
    /// Sixteen landmarks with one-sided flexion ranges, so that no two
    /// poses in the range share a projection up to a depth flip.
    pub fn default_joints() -> Vec<JointSpec> {
        let down = [0.0, 0.0, -1.0];
        let up = [0.0, 0.0, 1.0];
        let left = [1.0, 0.0, 0.0];
        let right = [-1.0, 0.0, 0.0];
        // positive x rotation swings a hanging bone forward; positive y swings
        // it towards the body's right
        let thigh = |out: f64| {
            [
                [0.0, 0.7],
                if out < 0.0 { [-0.3, 0.0] } else { [0.0, 0.3] },
                [0.0, 0.0],
            ]
        };
        let shin = [[-1.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
        let arm = |out: f64| {
            [
                [0.0, 1.0],
                if out < 0.0 { [-0.6, 0.0] } else { [0.0, 0.6] },
                [0.0, 0.4],
            ]
        };
        let forearm = [[0.0, 1.2], [0.0, 0.0], [0.0, 0.0]];
        vec![
            JointSpec {
                name: "pelvis".into(),
                parent: None,
                length: 0.0,
                direction: [0.0; 3],
                angle_ranges: RIGID,
            },
            joint("right_hip", 0, 130.0, right, RIGID),
            joint("right_knee", 1, 450.0, down, thigh(1.0)),
            joint("right_ankle", 2, 440.0, down, shin),
            joint("left_hip", 0, 130.0, left, RIGID),
            joint("left_knee", 4, 450.0, down, thigh(-1.0)),
            joint("left_ankle", 5, 440.0, down, shin),
            joint(
                "spine",
                0,
                230.0,
                up,
                [[-0.3, 0.0], [-0.1, 0.1], [0.0, 0.3]],
            ),
            joint(
                "thorax",
                7,
                250.0,
                up,
                [[-0.1, 0.0], [0.0, 0.0], [0.0, 0.0]],
            ),
            joint("head", 8, 200.0, up, [[-0.3, 0.0], [0.0, 0.0], [0.0, 0.0]]),
            joint("left_shoulder", 8, 150.0, left, RIGID),
            joint("left_elbow", 10, 280.0, down, arm(-1.0)),
            joint("left_wrist", 11, 250.0, down, forearm),
            joint("right_shoulder", 8, 150.0, right, RIGID),
            joint("right_elbow", 13, 280.0, down, arm(1.0)),
            joint("right_wrist", 14, 250.0, down, forearm),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_cameras < 2 {
            return bad(format!("need at least 2 cameras, got {}", self.n_cameras));
        }
        if !(self.pixel_noise >= 0.0) {
            return bad("pixel noise must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) || !(self.outlier_magnitude >= 0.0) {
            return bad("outlier rate must lie in [0, 1] and magnitude be non-negative".into());
        }
        if !(self.focal_length > 0.0 && self.image_width > 0.0 && self.image_height > 0.0) {
            return bad("focal length and image size must be positive".into());
        }
        if !(self.ring_radius > 0.0) {
            return bad("ring radius must be positive".into());
        }
        Norm2DParams::new(self.norm_scale)?;
        if self.joints.first().is_none_or(|j| j.parent.is_some()) {
            return bad("the first joint must be the root".into());
        }
        for (i, j) in self.joints.iter().enumerate().skip(1) {
            match j.parent {
                Some(p) if p < i => {}
                _ => {
                    return bad(format!(
                        "joint {} must have a parent listed before it",
                        j.name
                    ))
                }
            }
            let d = Vector3::from(j.direction);
            if j.angle_ranges.iter().any(|[lo, hi]| !(lo <= hi)) {
                return bad(format!("joint {} has an empty angle range", j.name));
            }
            if !(j.length > 0.0) || (d.norm() - 1.0).abs() > 1e-9 {
                return bad(format!(
                    "joint {} needs a positive length and a unit direction",
                    j.name
                ));
            }
        }
        self.skeleton().map(|_| ())
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        Skeleton::new(
            self.joints.iter().map(|j| j.name.clone()).collect(),
            self.joints.iter().map(|j| j.parent).collect(),
            0,
        )
    }

    fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal_length,
            0.0,
            self.image_width / 2.0,
            0.0,
            self.focal_length,
            self.image_height / 2.0,
            0.0,
            0.0,
            1.0,
        )
    }

    fn rig(&self, rng: &mut ChaCha8Rng) -> Result<CameraRig> {
        let target = Vector3::new(0.0, 0.0, self.root_height);
        let cameras = (0..self.n_cameras)
            .map(|c| {
                let azimuth = std::f64::consts::TAU * c as f64 / self.n_cameras as f64;
                let jitter = if self.height_jitter > 0.0 {
                    rng.random_range(-self.height_jitter..=self.height_jitter)
                } else {
                    0.0
                };
                let eye = Vector3::new(
                    self.ring_radius * azimuth.cos(),
                    self.ring_radius * azimuth.sin(),
                    self.camera_height + jitter,
                );
                CameraView::look_at(c, self.intrinsics(), eye, target, Vector3::z())
            })
            .collect::<Result<Vec<_>>>()?;
        CameraRig::new(cameras, "mm")
    }

    fn sample_pose(&self, rng: &mut ChaCha8Rng) -> Pose3D {
        let yaw = if self.yaw_range > 0.0 {
            rng.random_range(-self.yaw_range..=self.yaw_range)
        } else {
            0.0
        };
        let mut offset = Vector3::new(0.0, 0.0, self.root_height);
        if self.position_range > 0.0 {
            offset.x += rng.random_range(-self.position_range..=self.position_range);
            offset.y += rng.random_range(-self.position_range..=self.position_range);
        }
        let mut global = vec![Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)];
        let mut points = vec![offset];
        for j in &self.joints[1..] {
            let mut angle = |[lo, hi]: [f64; 2]| {
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            };
            let [ax, ay, az] = j.angle_ranges;
            let local = Rotation3::from_euler_angles(angle(ax), angle(ay), angle(az));
            let p = j.parent.expect("validated");
            let g = global[p] * local;
            points.push(points[p] + g * (Vector3::from(j.direction) * j.length));
            global.push(g);
        }
        Pose3D::world(points)
    }

    fn inside(&self, pose: &Pose3D, rig: &CameraRig) -> Option<Vec<Vec<Vector2<f64>>>> {
        let mut views = Vec::with_capacity(rig.len());
        for cam in rig.cameras() {
            let mut pts = Vec::with_capacity(pose.len());
            for l in &pose.landmarks {
                let px = cam.project_point(&cam.to_camera(l))?;
                if !(0.0..=self.image_width).contains(&px.x)
                    || !(0.0..=self.image_height).contains(&px.y)
                {
                    return None;
                }
                pts.push(px);
            }
            views.push(pts);
        }
        Some(views)
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 2500,
            n_cameras: 4,
            joints: Self::default_joints(),
            root_height: 1000.0,
            position_range: 300.0,
            yaw_range: std::f64::consts::PI,
            ring_radius: 4500.0,
            camera_height: 1500.0,
            height_jitter: 200.0,
            focal_length: 1000.0,
            image_width: 1000.0,
            image_height: 1000.0,
            pixel_noise: 0.0,
            outlier_rate: 0.0,
            outlier_magnitude: 50.0,
            norm_scale: 250.0,
            seed: 0,
        }
    }
}

/// Generates a dataset with ground truth on every sample. Deterministic for
/// a fixed configuration.
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rig = config.rig(&mut rng)?;
    // corruption has its own stream so poses do not depend on the noise settings
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(1);
    let noise = Normal::new(0.0, config.pixel_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let (gt, clean) = (0..MAX_ATTEMPTS)
            .find_map(|_| {
                let pose = config.sample_pose(&mut rng);
                config.inside(&pose, &rig).map(|v| (pose, v))
            })
            .ok_or_else(|| {
                Error::Generation(format!(
                    "sample {i}: skeleton left some camera frustum in {MAX_ATTEMPTS} attempts"
                ))
            })?;
        debug_assert!(rig
            .cameras()
            .iter()
            .all(|c| world_to_camera(&gt, c).is_ok()));
        let detections = clean
            .into_iter()
            .map(|pts| {
                let landmarks = pts
                    .into_iter()
                    .map(|p| {
                        let mut q = p;
                        if config.pixel_noise > 0.0 {
                            q += Vector2::new(
                                noise.sample(&mut noise_rng),
                                noise.sample(&mut noise_rng),
                            );
                        }
                        if config.outlier_rate > 0.0 && noise_rng.random_bool(config.outlier_rate) {
                            let m = config.outlier_magnitude;
                            q = p + Vector2::new(
                                noise_rng.random_range(-m..=m),
                                noise_rng.random_range(-m..=m),
                            );
                        }
                        q
                    })
                    .collect();
                Pose2D {
                    landmarks,
                    confidence: None,
                    frame: PlaneFrame::Pixels,
                }
            })
            .collect();
        samples.push(RigSample {
            id: format!("synth/{i:06}"),
            detections,
            gt_pose: Some(gt),
            triangulation: None,
        });
    }
    Dataset::new(
        rig,
        samples,
        config.skeleton()?,
        Norm2DParams::new(config.norm_scale)?,
    )
}
