//! Evaluation reports: per-group and aggregate metric rows.
//!
//! CSV columns: `group,count,mpjpe,p_mpjpe,pck,auc`. `count` is the number of
//! evaluated poses; metrics are per-pose averages. The aggregate row is named
//! `all` and comes last.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    auc, auc_grid, mpjpe, p_mpjpe, pck3d, procrustes_align, root_aligned, AUC_STEPS, PCK_THRESHOLD,
};
use crate::geometry::Pose3D;
use crate::{Error, Result};

pub const REPORT_HEADER: &str = "group,count,mpjpe,p_mpjpe,pck,auc";

/// Alignment applied before MPJPE and PCK.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairAlignment {
    Root,
    Procrustes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub pck_threshold: f64,
    pub auc_max: f64,
    pub auc_steps: usize,
    pub pck_alignment: PairAlignment,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pck_threshold: PCK_THRESHOLD,
            auc_max: PCK_THRESHOLD,
            auc_steps: AUC_STEPS,
            pck_alignment: PairAlignment::Root,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub group: String,
    pub count: usize,
    pub mpjpe: f64,
    pub p_mpjpe: f64,
    pub pck: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn aggregate(&self) -> &ReportRow {
        self.rows
            .last()
            .expect("report always has an aggregate row")
    }
}

fn row(
    group: String,
    pairs: &[(&Pose3D, &Pose3D)],
    root: usize,
    config: &EvalConfig,
) -> Result<ReportRow> {
    let mut m = 0.0;
    let mut pm = 0.0;
    let mut preds = Vec::with_capacity(pairs.len());
    let mut gts = Vec::with_capacity(pairs.len());
    for (pred, gt) in pairs {
        let (p, g) = root_aligned(pred, gt, root)?;
        m += mpjpe(&p, &g)?;
        pm += p_mpjpe(&p, &g)?;
        let p = match config.pck_alignment {
            PairAlignment::Root => p,
            PairAlignment::Procrustes => procrustes_align(&p, &g)?.aligned_pose,
        };
        preds.push(p);
        gts.push(g);
    }
    let k = pairs.len() as f64;
    Ok(ReportRow {
        group,
        count: pairs.len(),
        mpjpe: m / k,
        p_mpjpe: pm / k,
        pck: pck3d(&preds, &gts, config.pck_threshold)?,
        auc: auc(&preds, &gts, &auc_grid(config.auc_max, config.auc_steps))?,
    })
}

/// Scores `(group, prediction, ground truth)` triples. MPJPE is computed on
/// root-aligned poses.
pub fn evaluate_pairs(
    pairs: &[(String, Pose3D, Pose3D)],
    root: usize,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let mut groups: BTreeMap<&str, Vec<(&Pose3D, &Pose3D)>> = BTreeMap::new();
    for (g, p, t) in pairs {
        groups.entry(g.as_str()).or_default().push((p, t));
    }
    let mut rows = Vec::with_capacity(groups.len() + 1);
    if groups.len() > 1 {
        for (g, members) in &groups {
            rows.push(row(g.to_string(), members, root, config)?);
        }
    }
    let all: Vec<(&Pose3D, &Pose3D)> = pairs.iter().map(|(_, p, t)| (p, t)).collect();
    rows.push(row("all".into(), &all, root, config)?);
    Ok(EvalReport { rows })
}

pub fn format_report(report: &EvalReport) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?}",
            r.group, r.count, r.mpjpe, r.p_mpjpe, r.pck, r.auc
        )
        .unwrap();
    }
    out
}
