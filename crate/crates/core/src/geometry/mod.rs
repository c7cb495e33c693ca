//! Calibrated pinhole cameras, pose containers, rigid frame transforms,
//! projection and DLT triangulation.
//!
//! Every function here is pure. Lens distortion is not modelled; detections
//! are expected to be undistorted upstream.

mod calibration;
mod camera;
mod pose;
mod triangulation;

pub use calibration::{
    format_calibration, parse_calibration, read_calibration, write_calibration, CALIBRATION_HEADER,
};
pub use camera::{CameraId, CameraRig, CameraView};
pub use pose::{Frame, PlaneFrame, Pose2D, Pose3D};
pub(crate) use triangulation::triangulate_list;
pub use triangulation::{
    conditioning_scale, triangulate_dlt, triangulate_landmark, triangulate_landmark_jacobian,
    DltView, WorldConditioning,
};

use nalgebra::{Vector2, Vector3};

use crate::{Error, Result};

/// Points with depth at or below this (world units) cannot be projected.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Maps a world-frame pose into the frame of `cam` with `R·X + t`.
pub fn world_to_camera(pose: &Pose3D, cam: &CameraView) -> Result<Pose3D> {
    if pose.frame != Frame::World {
        return Err(Error::contract(format!(
            "world_to_camera expects a world-frame pose, got {:?}",
            pose.frame
        )));
    }
    if pose.root_relative {
        return Err(Error::contract("world_to_camera needs an absolute pose"));
    }
    Ok(Pose3D {
        landmarks: pose.landmarks.iter().map(|x| cam.to_camera(x)).collect(),
        frame: Frame::Camera(cam.id()),
        root_relative: false,
    })
}

/// Inverse of [`world_to_camera`]: `Rᵀ·(X − t)`.
pub fn camera_to_world(pose: &Pose3D, cam: &CameraView) -> Result<Pose3D> {
    if pose.frame != Frame::Camera(cam.id()) {
        return Err(Error::contract(format!(
            "camera_to_world for camera {} got a pose in {:?}",
            cam.id(),
            pose.frame
        )));
    }
    if pose.root_relative {
        return Err(Error::contract("camera_to_world needs an absolute pose"));
    }
    Ok(Pose3D {
        landmarks: pose.landmarks.iter().map(|x| cam.to_world(x)).collect(),
        frame: Frame::World,
        root_relative: false,
    })
}

/// Re-expresses a pose given in the frame of `from` in the frame of `to`.
pub fn camera_to_camera(pose: &Pose3D, from: &CameraView, to: &CameraView) -> Result<Pose3D> {
    world_to_camera(&camera_to_world(pose, from)?, to)
}

/// Pinhole projection of a camera-frame pose into pixel coordinates.
pub fn project(pose: &Pose3D, cam: &CameraView) -> Result<Pose2D> {
    if pose.frame != Frame::Camera(cam.id()) {
        return Err(Error::contract(format!(
            "project for camera {} got a pose in {:?}",
            cam.id(),
            pose.frame
        )));
    }
    if pose.root_relative {
        return Err(Error::contract(
            "project needs absolute depth; the pose is root-relative",
        ));
    }
    let landmarks = pose
        .landmarks
        .iter()
        .enumerate()
        .map(|(n, x)| {
            cam.project_point(x).ok_or(Error::DegenerateDepth {
                landmark: n,
                depth: x.z,
            })
        })
        .collect::<Result<Vec<Vector2<f64>>>>()?;
    Ok(Pose2D {
        landmarks,
        confidence: None,
        frame: PlaneFrame::Pixels,
    })
}

/// Subtracts landmark `root` from every landmark. Returns the centered pose
/// and the removed root position.
pub fn root_center(pose: &Pose3D, root: usize) -> Result<(Pose3D, Vector3<f64>)> {
    if pose.root_relative {
        return Err(Error::contract("pose is already root-relative"));
    }
    let origin = *pose.landmarks.get(root).ok_or_else(|| {
        Error::contract(format!(
            "root index {root} out of range for {} landmarks",
            pose.landmarks.len()
        ))
    })?;
    let mut landmarks: Vec<Vector3<f64>> = pose.landmarks.iter().map(|x| x - origin).collect();
    // exact zero, independent of rounding in x - x
    landmarks[root] = Vector3::zeros();
    Ok((
        Pose3D {
            landmarks,
            frame: pose.frame,
            root_relative: true,
        },
        origin,
    ))
}

/// Places a root-relative pose back at `root`.
pub fn root_restore(pose: &Pose3D, root: Vector3<f64>) -> Pose3D {
    Pose3D {
        landmarks: pose.landmarks.iter().map(|x| x + root).collect(),
        frame: pose.frame,
        root_relative: false,
    }
}
