//! Datasets: a calibrated rig, per-sample multi-view detections, optional
//! ground truth and cached input triangulations.
//!
//! Detections enter the network root-centered and divided by a fixed,
//! per-dataset pixel scale ([`Norm2DParams`]).

mod io;
mod synth;

pub use io::{
    format_detections, format_poses, load_dataset, parse_detections, parse_poses, read_detections,
    read_poses, save_dataset, DatasetManifest, DetectionRecord, ManifestSkeleton, PoseRecord,
    DETECTIONS_HEADER, MANIFEST_FILE, POSES_HEADER,
};
pub use synth::{synth_generate, JointSpec, SynthConfig};

use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::geometry::{triangulate_dlt, CameraRig, PlaneFrame, Pose2D, Pose3D};
use crate::losses::MultiViewSample;
use crate::{Error, Result};

/// Landmark names, kinematic parents and the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    /// Parent index per landmark; `None` only for the root.
    pub parents: Vec<Option<usize>>,
    pub root: usize,
}

impl Skeleton {
    pub fn new(names: Vec<String>, parents: Vec<Option<usize>>, root: usize) -> Result<Self> {
        let s = Self {
            names,
            parents,
            root,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n < 2 || self.parents.len() != n {
            return Err(Error::Config(format!(
                "skeleton needs at least 2 landmarks and one parent per landmark ({} names, {} parents)",
                n,
                self.parents.len()
            )));
        }
        if self.root >= n || self.parents[self.root].is_some() {
            return Err(Error::Config(format!(
                "root {} must exist and have no parent",
                self.root
            )));
        }
        for (i, p) in self.parents.iter().enumerate() {
            match p {
                None if i != self.root => {
                    return Err(Error::Config(format!("landmark {i} has no parent")))
                }
                Some(p) if *p >= n || *p == i => {
                    return Err(Error::Config(format!(
                        "landmark {i} has invalid parent {p}"
                    )))
                }
                _ => {}
            }
        }
        // every chain must reach the root
        for start in 0..n {
            let mut at = start;
            for _ in 0..n {
                match self.parents[at] {
                    Some(p) => at = p,
                    None => break,
                }
            }
            if at != self.root {
                return Err(Error::Config(format!(
                    "landmark {start} is not connected to the root"
                )));
            }
        }
        Ok(())
    }

    /// `(child, parent)` pairs.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| (i, p)))
    }

    pub fn bone_lengths(&self, pose: &Pose3D) -> Vec<f64> {
        self.bones()
            .map(|(c, p)| (pose.landmarks[c] - pose.landmarks[p]).norm())
            .collect()
    }

    pub fn mean_bone_length(&self, pose: &Pose3D) -> f64 {
        let lengths = self.bone_lengths(pose);
        lengths.iter().sum::<f64>() / lengths.len() as f64
    }
}

/// Root-centering plus division by a constant pixel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norm2DParams {
    pub scale: f64,
}

impl Norm2DParams {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!(
                "normalization scale must be positive, got {scale}"
            )));
        }
        Ok(Self { scale })
    }
}

/// Pixel pose → normalized pose, returning the pixel origin that was removed.
pub fn normalize_2d(
    pose: &Pose2D,
    root: usize,
    params: &Norm2DParams,
) -> Result<(Pose2D, Vector2<f64>)> {
    if pose.frame != PlaneFrame::Pixels {
        return Err(Error::contract("normalize_2d expects a pixel-frame pose"));
    }
    let origin = *pose
        .landmarks
        .get(root)
        .ok_or_else(|| Error::contract(format!("root {root} out of range")))?;
    if !(origin.x.is_finite() && origin.y.is_finite()) {
        return Err(Error::NonFinite("root landmark".into()));
    }
    let normalized = Pose2D {
        landmarks: pose
            .landmarks
            .iter()
            .map(|p| (p - origin) / params.scale)
            .collect(),
        confidence: pose.confidence.clone(),
        frame: PlaneFrame::Normalized,
    };
    Ok((normalized, origin))
}

pub fn denormalize_2d(
    pose: &Pose2D,
    origin: Vector2<f64>,
    params: &Norm2DParams,
) -> Result<Pose2D> {
    if pose.frame != PlaneFrame::Normalized {
        return Err(Error::contract("denormalize_2d expects a normalized pose"));
    }
    Ok(Pose2D {
        landmarks: pose
            .landmarks
            .iter()
            .map(|p| p * params.scale + origin)
            .collect(),
        confidence: pose.confidence.clone(),
        frame: PlaneFrame::Pixels,
    })
}

/// One synchronized capture: a detection per rig camera, in rig order.
#[derive(Debug, Clone, PartialEq)]
pub struct RigSample {
    pub id: String,
    pub detections: Vec<Pose2D>,
    pub gt_pose: Option<Pose3D>,
    /// Input triangulation of `detections`, once computed.
    pub triangulation: Option<Pose3D>,
}

impl RigSample {
    /// Group key: everything before the last `/` in the id, or the empty
    /// string.
    pub fn group(&self) -> &str {
        self.id.rsplit_once('/').map_or("", |(g, _)| g)
    }

    fn observations(&self, rig: &CameraRig) -> BTreeMap<usize, Pose2D> {
        rig.ids().zip(self.detections.iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rig: CameraRig,
    pub samples: Vec<RigSample>,
    pub skeleton: Skeleton,
    pub normalization: Norm2DParams,
    /// Ids of records dropped at load because a view was missing or
    /// non-finite.
    pub skipped: Vec<String>,
}

impl Dataset {
    pub fn new(
        rig: CameraRig,
        samples: Vec<RigSample>,
        skeleton: Skeleton,
        normalization: Norm2DParams,
    ) -> Result<Self> {
        let d = Self {
            rig,
            samples,
            skeleton,
            normalization,
            skipped: Vec::new(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        Norm2DParams::new(self.normalization.scale)?;
        let n = self.n_landmarks();
        for s in &self.samples {
            if s.detections.len() != self.rig.len() {
                return Err(Error::contract(format!(
                    "sample {} has {} views, rig has {}",
                    s.id,
                    s.detections.len(),
                    self.rig.len()
                )));
            }
            for d in &s.detections {
                d.validate(n)?;
                if d.frame != PlaneFrame::Pixels {
                    return Err(Error::contract(format!(
                        "sample {} stores non-pixel detections",
                        s.id
                    )));
                }
            }
            if let Some(gt) = &s.gt_pose {
                gt.validate(n, self.skeleton.root)?;
            }
            if let Some(t) = &s.triangulation {
                t.validate(n, self.skeleton.root)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_landmarks(&self) -> usize {
        self.skeleton.len()
    }

    pub fn root(&self) -> usize {
        self.skeleton.root
    }

    pub fn has_ground_truth(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.gt_pose.is_some())
    }

    /// Fills every missing triangulation cache entry.
    pub fn triangulate(&mut self) -> Result<()> {
        let rig = &self.rig;
        for s in &mut self.samples {
            if s.triangulation.is_none() {
                s.triangulation = Some(triangulate_dlt(&s.observations(rig), rig)?);
            }
        }
        Ok(())
    }

    /// Recomputes every cached triangulation and reports the largest
    /// landmark deviation from the cache.
    pub fn verify_triangulations(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for s in &self.samples {
            if let Some(cached) = &s.triangulation {
                let fresh = triangulate_dlt(&s.observations(&self.rig), &self.rig)?;
                for (a, b) in cached.landmarks.iter().zip(&fresh.landmarks) {
                    worst = worst.max((a - b).norm());
                }
            }
        }
        Ok(worst)
    }

    /// First `n` samples and the rest, both on the same rig.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.samples.len() {
            return Err(Error::contract(format!(
                "cannot split {} samples at {n}",
                self.samples.len()
            )));
        }
        let part = |samples: &[RigSample]| Dataset {
            rig: self.rig.clone(),
            samples: samples.to_vec(),
            skeleton: self.skeleton.clone(),
            normalization: self.normalization,
            skipped: Vec::new(),
        };
        Ok((part(&self.samples[..n]), part(&self.samples[n..])))
    }

    /// Loss-side view of sample `i`: normalized detections, their pixel
    /// origins and the input triangulation (computed if not cached).
    pub fn multiview_sample(&self, i: usize) -> Result<MultiViewSample> {
        let s = &self.samples[i];
        let mut detections = Vec::with_capacity(s.detections.len());
        let mut origins = Vec::with_capacity(s.detections.len());
        for d in &s.detections {
            let (norm, origin) = normalize_2d(d, self.root(), &self.normalization)?;
            detections.push(norm);
            origins.push(origin);
        }
        let triangulation = match &s.triangulation {
            Some(t) => t.clone(),
            None => triangulate_dlt(&s.observations(&self.rig), &self.rig)?,
        };
        Ok(MultiViewSample {
            detections,
            origins,
            input_triangulation: Some(triangulation),
            anchors: None,
        })
    }
}
