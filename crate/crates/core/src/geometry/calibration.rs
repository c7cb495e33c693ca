//! Calibration file: TOML with one `[[camera]]` table per camera.
//!
//! ```toml
//! # mvlift calibration v1
//! [[camera]]
//! id = 0
//! units = "mm"
//! K = [1000.0, 0.0, 500.0, 0.0, 1000.0, 500.0, 0.0, 0.0, 1.0]
//! R = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
//! t = [0.0, 0.0, 5000.0]
//! ```
//!
//! `K` and `R` are row-major. An optional `distortion` array is accepted only
//! if every coefficient is zero.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;

use super::{CameraRig, CameraView};
use crate::{Error, Result};

pub const CALIBRATION_HEADER: &str = "# mvlift calibration v1";

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    camera: Vec<CameraEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraEntry {
    id: usize,
    units: String,
    #[serde(rename = "K")]
    k: [f64; 9],
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    #[serde(default)]
    distortion: Vec<f64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|b| *b == b'\n')
        .count()
        + 1
}

pub fn parse_calibration(text: &str, path: &Path) -> Result<CameraRig> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let file: CalibrationFile = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
        parse_err(line, e.message().to_string())
    })?;
    let units = file
        .camera
        .first()
        .map(|c| c.units.clone())
        .unwrap_or_default();
    let mut cameras = Vec::with_capacity(file.camera.len());
    for entry in file.camera {
        if entry.units != units {
            return Err(Error::InvalidRig(format!(
                "camera {} uses units {:?}, rig uses {:?}",
                entry.id, entry.units, units
            )));
        }
        if entry.distortion.iter().any(|d| *d != 0.0) {
            return Err(Error::InvalidCamera {
                id: entry.id,
                reason: "non-zero lens distortion is not supported; undistort detections first"
                    .into(),
            });
        }
        cameras.push(CameraView::new(
            entry.id,
            Matrix3::from_row_slice(&entry.k),
            Matrix3::from_row_slice(&entry.r),
            Vector3::from_row_slice(&entry.t),
        )?);
    }
    CameraRig::new(cameras, units)
}

pub fn read_calibration(path: &Path) -> Result<CameraRig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_calibration(&text, path)
}

fn list(values: impl IntoIterator<Item = f64>) -> String {
    let items: Vec<String> = values.into_iter().map(|v| format!("{v:?}")).collect();
    format!("[{}]", items.join(", "))
}

/// Serializes a rig. Floats use the shortest round-trip representation, so
/// writing a freshly read file reproduces it byte for byte.
pub fn format_calibration(rig: &CameraRig) -> String {
    let mut out = String::new();
    out.push_str(CALIBRATION_HEADER);
    out.push('\n');
    for cam in rig.cameras() {
        let k = cam.intrinsics();
        let r = cam.rotation();
        let row_major = |m: &Matrix3<f64>| -> Vec<f64> { m.transpose().iter().copied().collect() };
        let _ = write!(
            out,
            "\n[[camera]]\nid = {}\nunits = {:?}\nK = {}\nR = {}\nt = {}\n",
            cam.id(),
            rig.units(),
            list(row_major(k)),
            list(row_major(r)),
            list(cam.translation().iter().copied()),
        );
    }
    out
}

pub fn write_calibration(rig: &CameraRig, path: &Path) -> Result<()> {
    std::fs::write(path, format_calibration(rig)).map_err(|e| Error::io(path, e))
}
