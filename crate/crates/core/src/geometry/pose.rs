use nalgebra::{Vector2, Vector3};

use super::CameraId;
use crate::{Error, Result};

/// Coordinate frame of a 3D pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Frame {
    World,
    Camera(CameraId),
}

/// Coordinate frame of a 2D pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlaneFrame {
    /// Raw image pixels.
    Pixels,
    /// Root-centered and scaled, see [`crate::data::Norm2DParams`].
    Normalized,
}

/// `N` image-plane landmarks. Confidences are carried but never used by the
/// geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose2D {
    pub landmarks: Vec<Vector2<f64>>,
    pub confidence: Option<Vec<f64>>,
    pub frame: PlaneFrame,
}

impl Pose2D {
    pub fn pixels(landmarks: Vec<Vector2<f64>>) -> Self {
        Self {
            landmarks,
            confidence: None,
            frame: PlaneFrame::Pixels,
        }
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.landmarks
            .iter()
            .all(|p| p.x.is_finite() && p.y.is_finite())
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.landmarks.len() != n {
            return Err(Error::LandmarkCount {
                expected: n,
                got: self.landmarks.len(),
            });
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("2D pose landmarks".into()));
        }
        if let Some(conf) = &self.confidence {
            if conf.len() != n {
                return Err(Error::LandmarkCount {
                    expected: n,
                    got: conf.len(),
                });
            }
            if conf.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::contract("confidences must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Landmarks flattened as `x0 y0 x1 y1 …`.
    pub fn flat(&self) -> Vec<f64> {
        self.landmarks.iter().flat_map(|p| [p.x, p.y]).collect()
    }
}

/// `N` landmarks in 3D.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub landmarks: Vec<Vector3<f64>>,
    pub frame: Frame,
    pub root_relative: bool,
}

impl Pose3D {
    pub fn world(landmarks: Vec<Vector3<f64>>) -> Self {
        Self {
            landmarks,
            frame: Frame::World,
            root_relative: false,
        }
    }

    /// Builds a pose from `x0 y0 z0 x1 …`.
    pub fn from_flat(flat: &[f64], frame: Frame, root_relative: bool) -> Self {
        debug_assert_eq!(flat.len() % 3, 0);
        Self {
            landmarks: flat
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
            frame,
            root_relative,
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.landmarks
            .iter()
            .flat_map(|p| [p.x, p.y, p.z])
            .collect()
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn validate(&self, n: usize, root: usize) -> Result<()> {
        if self.landmarks.len() != n {
            return Err(Error::LandmarkCount {
                expected: n,
                got: self.landmarks.len(),
            });
        }
        if self
            .landmarks
            .iter()
            .any(|p| !p.iter().all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite("3D pose landmarks".into()));
        }
        if self.root_relative && self.landmarks[root].amax() > 1e-9 {
            return Err(Error::contract("root-relative pose has a non-zero root"));
        }
        Ok(())
    }
}
