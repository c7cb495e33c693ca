//! Self-supervised multi-view 3D human pose lifting.
//!
//! A calibrated rig of `C` synchronized cameras observes one person. Per-view
//! 2D detections are lifted to root-relative 3D poses by a residual MLP, which
//! is trained without any 3D annotation from four geometric losses:
//!
//! * input triangulation: match the DLT triangulation of the detections,
//! * re-projection: project every view's prediction into every camera,
//! * consistency: predictions from different views must agree in 3D,
//! * output triangulation: match the DLT triangulation of the re-projected
//!   predictions (enabled for the final fraction of epochs).
//!
//! At inference time a single view suffices.
//!
//! Module map:
//!
//! * [`geometry`]: cameras, poses, frame transforms, projection, DLT.
//! * [`model`]: the lifter network with analytic backward and checkpoints.
//! * [`losses`]: the four objectives and their weighted total.
//! * [`data`]: dataset files, 2D normalization and the synthetic rig.
//! * [`train`]: Adam, the training loop and the loss ablation.
//! * [`eval`]: MPJPE, Procrustes alignment, 3DPCK/AUC and reports.

pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{CameraId, CameraRig, CameraView, Frame, Pose2D, Pose3D};
pub use model::{GradientSet, Mode, ModelConfig, ModelParams};
