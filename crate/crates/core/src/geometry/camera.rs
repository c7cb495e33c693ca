use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3};

use super::DEPTH_EPSILON;
use crate::{Error, Result};

pub type CameraId = usize;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// One calibrated pinhole camera. `R` and `t` map world points into the
/// camera frame; the projection matrix is `K·[R|t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    id: CameraId,
    intrinsics: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    projection: Matrix3x4<f64>,
}

impl CameraView {
    pub fn new(
        id: CameraId,
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let bad = |reason: String| Error::InvalidCamera { id, reason };
        if intrinsics
            .iter()
            .chain(rotation.iter())
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(bad("non-finite calibration entry".into()));
        }
        if intrinsics[(1, 0)] != 0.0 || intrinsics[(2, 0)] != 0.0 || intrinsics[(2, 1)] != 0.0 {
            return Err(bad("intrinsics must be upper-triangular".into()));
        }
        if (0..3).any(|i| intrinsics[(i, i)] <= 0.0) {
            return Err(bad("intrinsics diagonal must be strictly positive".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho >= ORTHONORMAL_TOL {
            return Err(bad(format!(
                "rotation is not orthonormal (|RᵀR − I|∞ = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() >= ORTHONORMAL_TOL {
            return Err(bad(format!("rotation determinant is {det}, expected 1")));
        }
        let mut extrinsic = Matrix3x4::zeros();
        extrinsic.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        extrinsic
            .fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&translation);
        Ok(Self {
            id,
            intrinsics,
            rotation,
            translation,
            projection: intrinsics * extrinsic,
        })
    }

    /// Camera at `eye` looking at `target`, image `y` axis pointing away
    /// from `up`.
    pub fn look_at(
        id: CameraId,
        intrinsics: Matrix3<f64>,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(Error::InvalidCamera {
                id,
                reason: "viewing direction is parallel to up".into(),
            });
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(id, intrinsics, rotation, translation)
    }

    pub fn id(&self) -> CameraId {
        self.id
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn projection_matrix(&self) -> &Matrix3x4<f64> {
        &self.projection
    }

    /// Optical center in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    pub fn to_world(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (cam - self.translation)
    }

    /// Projects a camera-frame point; `None` if it is not in front of the
    /// camera by more than the depth epsilon.
    pub fn project_point(&self, cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if cam.z <= DEPTH_EPSILON || !cam.z.is_finite() {
            return None;
        }
        let p = self.intrinsics * cam;
        Some(Vector2::new(p.x / p.z, p.y / p.z))
    }

    /// Jacobian of [`Self::project_point`] with respect to the camera-frame
    /// point, as rows `∂u/∂X` and `∂v/∂X`.
    pub fn projection_jacobian(&self, cam: &Vector3<f64>) -> Option<[Vector3<f64>; 2]> {
        if cam.z <= DEPTH_EPSILON {
            return None;
        }
        let p = self.intrinsics * cam;
        let (u, v) = (p.x / p.z, p.y / p.z);
        let k0 = self.intrinsics.row(0).transpose();
        let k1 = self.intrinsics.row(1).transpose();
        let k2 = self.intrinsics.row(2).transpose();
        Some([(k0 - k2 * u) / p.z, (k1 - k2 * v) / p.z])
    }

    /// Rotation taking directions in the frame of `self` to the frame of `to`.
    pub fn relative_rotation(&self, to: &CameraView) -> Matrix3<f64> {
        to.rotation * self.rotation.transpose()
    }
}

/// A calibrated, time-synchronized set of cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<CameraView>,
    units: String,
}

impl CameraRig {
    pub fn new(cameras: Vec<CameraView>, units: impl Into<String>) -> Result<Self> {
        if cameras.len() < 2 {
            return Err(Error::InvalidRig(format!(
                "a rig needs at least 2 cameras, got {}",
                cameras.len()
            )));
        }
        for (i, a) in cameras.iter().enumerate() {
            for b in &cameras[i + 1..] {
                if a.id == b.id {
                    return Err(Error::InvalidRig(format!("duplicate camera id {}", a.id)));
                }
                if a.projection == b.projection {
                    return Err(Error::InvalidRig(format!(
                        "cameras {} and {} share a projection matrix",
                        a.id, b.id
                    )));
                }
            }
        }
        Ok(Self {
            cameras,
            units: units.into(),
        })
    }

    pub fn cameras(&self) -> &[CameraView] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    pub fn ids(&self) -> impl Iterator<Item = CameraId> + '_ {
        self.cameras.iter().map(|c| c.id)
    }

    pub fn camera(&self, id: CameraId) -> Result<&CameraView> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .ok_or(Error::UnknownCamera(id))
    }

    /// Position of camera `id` in [`Self::cameras`].
    pub fn index_of(&self, id: CameraId) -> Option<usize> {
        self.cameras.iter().position(|c| c.id == id)
    }
}
