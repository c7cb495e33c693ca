use nalgebra::{Vector2, Vector3};
use ndarray::Array3;

use crate::geometry::{CameraId, CameraRig, Pose2D, Pose3D};
use crate::{Error, Result};

/// One synchronized training sample as seen by the losses.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewSample {
    /// Normalized detection per view, in batch camera order.
    pub detections: Vec<Pose2D>,
    /// Pixel position of each view's normalization origin.
    pub origins: Vec<Vector2<f64>>,
    /// Triangulation of the detections, world frame.
    pub input_triangulation: Option<Pose3D>,
    /// Camera-frame position of the triangulated root, per view.
    pub anchors: Option<Vec<Vector3<f64>>>,
}

impl MultiViewSample {
    pub(crate) fn anchors_or_err(&self, s: usize) -> Result<&[Vector3<f64>]> {
        self.anchors
            .as_deref()
            .ok_or_else(|| Error::contract(format!("sample {s} has no root anchors")))
    }
}

/// Samples, their detections and the per-view predictions `[S, C, 3N]`.
#[derive(Debug, Clone)]
pub struct MultiViewBatch {
    cameras: Vec<CameraId>,
    n_landmarks: usize,
    root: usize,
    norm_scale: f64,
    samples: Vec<MultiViewSample>,
    predictions: Array3<f64>,
}

impl MultiViewBatch {
    /// Builds a batch and derives the root anchors of every sample that
    /// carries an input triangulation.
    pub fn new(
        rig: &CameraRig,
        cameras: Vec<CameraId>,
        n_landmarks: usize,
        root: usize,
        norm_scale: f64,
        mut samples: Vec<MultiViewSample>,
        predictions: Array3<f64>,
    ) -> Result<Self> {
        let c = cameras.len();
        if root >= n_landmarks {
            return Err(Error::contract("root index out of range"));
        }
        if !(norm_scale > 0.0) {
            return Err(Error::contract("normalization scale must be positive"));
        }
        if predictions.dim() != (samples.len(), c, 3 * n_landmarks) {
            return Err(Error::contract(format!(
                "predictions have shape {:?}, expected ({}, {c}, {})",
                predictions.dim(),
                samples.len(),
                3 * n_landmarks
            )));
        }
        let cams = cameras
            .iter()
            .map(|id| rig.camera(*id))
            .collect::<Result<Vec<_>>>()?;
        for sample in &mut samples {
            if sample.detections.len() != c || sample.origins.len() != c {
                return Err(Error::contract(
                    "every sample needs one detection per camera",
                ));
            }
            for d in &sample.detections {
                d.validate(n_landmarks)?;
            }
            if let Some(tri) = &sample.input_triangulation {
                tri.validate(n_landmarks, root)?;
                if sample.anchors.is_none() {
                    let r = tri.landmarks[root];
                    sample.anchors = Some(cams.iter().map(|cam| cam.to_camera(&r)).collect());
                }
            }
            if let Some(a) = &sample.anchors {
                if a.len() != c {
                    return Err(Error::contract("one root anchor per camera is required"));
                }
            }
        }
        Ok(Self {
            cameras,
            n_landmarks,
            root,
            norm_scale,
            samples,
            predictions,
        })
    }

    pub fn cameras(&self) -> &[CameraId] {
        &self.cameras
    }

    pub fn n_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn n_landmarks(&self) -> usize {
        self.n_landmarks
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn norm_scale(&self) -> f64 {
        self.norm_scale
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[MultiViewSample] {
        &self.samples
    }

    pub fn predictions(&self) -> &Array3<f64> {
        &self.predictions
    }

    pub fn set_predictions(&mut self, predictions: Array3<f64>) -> Result<()> {
        if predictions.dim() != self.predictions.dim() {
            return Err(Error::contract("prediction shape changed"));
        }
        self.predictions = predictions;
        Ok(())
    }

    pub fn predictions_mut(&mut self) -> &mut Array3<f64> {
        &mut self.predictions
    }

    /// Prediction of sample `s` from view `c` as a camera-frame pose.
    pub fn prediction(&self, s: usize, c: usize) -> Pose3D {
        let flat: Vec<f64> = self.predictions.slice(ndarray::s![s, c, ..]).to_vec();
        Pose3D::from_flat(&flat, crate::geometry::Frame::Camera(self.cameras[c]), true)
    }
}
