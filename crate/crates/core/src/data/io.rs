//! Text formats for detections, 3D poses and the dataset manifest.
//!
//! Detections, one line per (sample, camera):
//!
//! ```text
//! # mvlift-detections v1 landmarks=N
//! <sample_id> <camera_id> x0 y0 x1 y1 … x(N-1) y(N-1) [c0 … c(N-1)]
//! ```
//!
//! 3D poses, one line per pose:
//!
//! ```text
//! # mvlift-poses v1 landmarks=N
//! <id> x0 y0 z0 … x(N-1) y(N-1) z(N-1)
//! ```
//!
//! Fields are separated by single spaces and floats are written in Rust's
//! shortest round-trip form, so save → load → save is byte-identical. Ids
//! must not contain whitespace; a `/` in a sample id separates an optional
//! group prefix. Blank lines and further `#` lines are ignored. An empty file
//! holds no records.
//!
//! The manifest is TOML; relative paths resolve against its directory:
//!
//! ```toml
//! calibration = "calibration.toml"
//! detections = "detections.txt"
//! ground_truth = "ground_truth.txt"
//! norm_scale = 250.0
//!
//! [skeleton]
//! names = ["pelvis", "hip", "knee"]
//! parents = [-1, 0, 1]
//! root = 0
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{Dataset, Norm2DParams, RigSample, Skeleton};
use crate::geometry::{read_calibration, write_calibration, CameraId, Pose2D, Pose3D};
use crate::{Error, Result};

pub const DETECTIONS_HEADER: &str = "# mvlift-detections v1";
pub const POSES_HEADER: &str = "# mvlift-poses v1";

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub sample_id: String,
    pub camera_id: CameraId,
    pub pose: Pose2D,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub id: String,
    pub landmarks: Vec<Vector3<f64>>,
    pub line: usize,
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Splits off the header and returns `(landmarks, body lines with numbers)`.
/// `None` for a file without content.
fn read_header<'a>(
    text: &'a str,
    header: &str,
    path: &Path,
) -> Result<Option<(usize, Vec<(usize, &'a str)>)>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let Some((_, first)) = lines.by_ref().find(|(_, l)| !l.trim().is_empty()) else {
        return Ok(None);
    };
    let rest = first
        .strip_prefix(header)
        .ok_or_else(|| parse_error(path, 1, format!("expected header `{header} landmarks=N`")))?;
    let n = rest
        .trim()
        .strip_prefix("landmarks=")
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .ok_or_else(|| parse_error(path, 1, "header must declare landmarks=N with N > 0"))?;
    let body = lines
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .collect();
    Ok(Some((n, body)))
}

fn parse_floats(tokens: &[&str], path: &Path, line: usize) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| parse_error(path, line, format!("`{t}` is not a number")))
        })
        .collect()
}

pub fn parse_detections(text: &str, path: &Path) -> Result<(Option<usize>, Vec<DetectionRecord>)> {
    let Some((n, body)) = read_header(text, DETECTIONS_HEADER, path)? else {
        return Ok((None, Vec::new()));
    };
    let mut records = Vec::with_capacity(body.len());
    for (line, content) in body {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let values = tokens.len().saturating_sub(2);
        if tokens.len() < 2 || (values != 2 * n && values != 3 * n) {
            return Err(parse_error(
                path,
                line,
                format!(
                    "expected sample id, camera id and {} or {} values, got {} fields",
                    2 * n,
                    3 * n,
                    tokens.len()
                ),
            ));
        }
        let camera_id = tokens[1]
            .parse::<CameraId>()
            .map_err(|_| parse_error(path, line, format!("`{}` is not a camera id", tokens[1])))?;
        let floats = parse_floats(&tokens[2..], path, line)?;
        let landmarks = floats[..2 * n]
            .chunks_exact(2)
            .map(|c| Vector2::new(c[0], c[1]))
            .collect();
        let confidence = (values == 3 * n).then(|| floats[2 * n..].to_vec());
        records.push(DetectionRecord {
            sample_id: tokens[0].to_string(),
            camera_id,
            pose: Pose2D {
                landmarks,
                confidence,
                frame: crate::geometry::PlaneFrame::Pixels,
            },
            line,
        });
    }
    Ok((Some(n), records))
}

pub fn read_detections(path: &Path) -> Result<(Option<usize>, Vec<DetectionRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, path)
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(Error::contract(format!(
            "id `{id}` is empty or contains whitespace"
        )));
    }
    Ok(())
}

/// Writes `(sample id, camera id, pose)` records.
pub fn format_detections<'a>(
    n: usize,
    records: impl IntoIterator<Item = (&'a str, CameraId, &'a Pose2D)>,
) -> Result<String> {
    let mut out = format!("{DETECTIONS_HEADER} landmarks={n}\n");
    for (id, cam, pose) in records {
        check_id(id)?;
        if pose.len() != n {
            return Err(Error::LandmarkCount {
                expected: n,
                got: pose.len(),
            });
        }
        write!(out, "{id} {cam}").unwrap();
        for p in &pose.landmarks {
            write!(out, " {:?} {:?}", p.x, p.y).unwrap();
        }
        if let Some(conf) = &pose.confidence {
            for c in conf {
                write!(out, " {c:?}").unwrap();
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_poses(text: &str, path: &Path) -> Result<(Option<usize>, Vec<PoseRecord>)> {
    let Some((n, body)) = read_header(text, POSES_HEADER, path)? else {
        return Ok((None, Vec::new()));
    };
    let mut records = Vec::with_capacity(body.len());
    for (line, content) in body {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.len() != 1 + 3 * n {
            return Err(parse_error(
                path,
                line,
                format!(
                    "expected an id and {} values, got {} fields",
                    3 * n,
                    tokens.len()
                ),
            ));
        }
        let floats = parse_floats(&tokens[1..], path, line)?;
        records.push(PoseRecord {
            id: tokens[0].to_string(),
            landmarks: floats
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
            line,
        });
    }
    Ok((Some(n), records))
}

pub fn read_poses(path: &Path) -> Result<(Option<usize>, Vec<PoseRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, path)
}

pub fn format_poses<'a>(
    n: usize,
    records: impl IntoIterator<Item = (&'a str, &'a Pose3D)>,
) -> Result<String> {
    let mut out = format!("{POSES_HEADER} landmarks={n}\n");
    for (id, pose) in records {
        check_id(id)?;
        if pose.len() != n {
            return Err(Error::LandmarkCount {
                expected: n,
                got: pose.len(),
            });
        }
        out.push_str(id);
        for p in &pose.landmarks {
            write!(out, " {:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub calibration: PathBuf,
    pub detections: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    pub norm_scale: f64,
    pub skeleton: ManifestSkeleton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSkeleton {
    pub names: Vec<String>,
    /// `-1` marks the root.
    pub parents: Vec<i64>,
    pub root: usize,
}

impl ManifestSkeleton {
    fn to_skeleton(&self) -> Result<Skeleton> {
        let parents = self
            .parents
            .iter()
            .map(|p| match *p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(Error::Config(format!("invalid parent index {p}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Skeleton::new(self.names.clone(), parents, self.root)
    }

    fn from_skeleton(s: &Skeleton) -> Self {
        Self {
            names: s.names.clone(),
            parents: s
                .parents
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            root: s.root,
        }
    }
}

impl DatasetManifest {
    /// Referenced files, resolved against the directory of `manifest_path`.
    pub fn files(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        [
            Some(&self.calibration),
            Some(&self.detections),
            self.ground_truth.as_ref(),
        ]
        .into_iter()
        .flatten()
        .map(|p| resolve(base, p))
        .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| {
            let line = e.span().map_or(1, |s| {
                text[..s.start.min(text.len())].matches('\n').count() + 1
            });
            parse_error(path, line, e.message())
        })
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads the manifest at `path` and everything it references. Samples
/// lacking a view or holding non-finite coordinates are skipped and listed in
/// [`Dataset::skipped`]. With `triangulate`, input triangulations are cached
/// eagerly.
pub fn load_dataset(path: &Path, triangulate: bool) -> Result<Dataset> {
    let manifest = DatasetManifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rig = read_calibration(&resolve(base, &manifest.calibration))?;
    let skeleton = manifest.skeleton.to_skeleton()?;
    let normalization = Norm2DParams::new(manifest.norm_scale)?;
    let n = skeleton.len();

    let det_path = resolve(base, &manifest.detections);
    let (declared, records) = read_detections(&det_path)?;
    if let Some(d) = declared {
        if d != n {
            return Err(parse_error(
                &det_path,
                1,
                format!("file declares {d} landmarks, skeleton has {n}"),
            ));
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut views: HashMap<String, BTreeMap<usize, Pose2D>> = HashMap::new();
    for r in records {
        let index = rig.index_of(r.camera_id).ok_or_else(|| {
            parse_error(
                &det_path,
                r.line,
                format!("unknown camera id {}", r.camera_id),
            )
        })?;
        if let Some(conf) = &r.pose.confidence {
            if conf.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(parse_error(
                    &det_path,
                    r.line,
                    "confidences must lie in [0, 1]",
                ));
            }
        }
        let entry = views.entry(r.sample_id.clone()).or_insert_with(|| {
            order.push(r.sample_id.clone());
            BTreeMap::new()
        });
        if entry.insert(index, r.pose).is_some() {
            return Err(parse_error(
                &det_path,
                r.line,
                format!(
                    "duplicate detection for sample {} camera {}",
                    r.sample_id, r.camera_id
                ),
            ));
        }
    }

    let mut samples = Vec::with_capacity(order.len());
    let mut skipped = Vec::new();
    for id in order {
        let per_view = views.remove(&id).expect("recorded id");
        if per_view.len() != rig.len() || per_view.values().any(|p| !p.is_finite()) {
            skipped.push(id);
            continue;
        }
        samples.push(RigSample {
            id,
            detections: per_view.into_values().collect(),
            gt_pose: None,
            triangulation: None,
        });
    }

    if let Some(gt) = &manifest.ground_truth {
        let gt_path = resolve(base, gt);
        let (declared, records) = read_poses(&gt_path)?;
        if let Some(d) = declared {
            if d != n {
                return Err(parse_error(
                    &gt_path,
                    1,
                    format!("file declares {d} landmarks, skeleton has {n}"),
                ));
            }
        }
        let index: HashMap<&str, usize> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let mut assigned = Vec::new();
        for r in records {
            match index.get(r.id.as_str()) {
                Some(&i) => assigned.push((i, r)),
                None if skipped.contains(&r.id) => {}
                None => {
                    return Err(parse_error(
                        &gt_path,
                        r.line,
                        format!("unknown sample id {}", r.id),
                    ))
                }
            }
        }
        for (i, r) in assigned {
            if samples[i].gt_pose.is_some() {
                return Err(parse_error(
                    &gt_path,
                    r.line,
                    format!("duplicate ground truth for {}", r.id),
                ));
            }
            samples[i].gt_pose = Some(Pose3D::world(r.landmarks));
        }
    }

    let mut dataset = Dataset::new(rig, samples, skeleton, normalization)?;
    dataset.skipped = skipped;
    if triangulate {
        dataset.triangulate()?;
    }
    Ok(dataset)
}

pub const MANIFEST_FILE: &str = "dataset.toml";

/// Writes calibration, detections, ground truth (when every sample has it)
/// and the manifest into `dir`; returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: &str| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(p, e))
    };
    write_calibration(&dataset.rig, &dir.join("calibration.toml"))?;
    let ids: Vec<CameraId> = dataset.rig.ids().collect();
    let detections = format_detections(
        dataset.n_landmarks(),
        dataset.samples.iter().flat_map(|s| {
            ids.iter()
                .zip(&s.detections)
                .map(move |(c, d)| (s.id.as_str(), *c, d))
        }),
    )?;
    write("detections.txt", &detections)?;
    let ground_truth = if dataset.has_ground_truth() {
        let text = format_poses(
            dataset.n_landmarks(),
            dataset
                .samples
                .iter()
                .map(|s| (s.id.as_str(), s.gt_pose.as_ref().expect("checked"))),
        )?;
        write("ground_truth.txt", &text)?;
        Some(PathBuf::from("ground_truth.txt"))
    } else {
        None
    };
    let manifest = DatasetManifest {
        calibration: "calibration.toml".into(),
        detections: "detections.txt".into(),
        ground_truth,
        norm_scale: dataset.normalization.scale,
        skeleton: ManifestSkeleton::from_skeleton(&dataset.skeleton),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write(MANIFEST_FILE, &text)?;
    Ok(dir.join(MANIFEST_FILE))
}
