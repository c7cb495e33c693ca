//! Per-epoch metrics file.
//!
//! ```text
//! epoch,L_in,L_proj,L_con,L_out,total,p_mpjpe
//! 0,1520.25,0.0421,...,
//! ```
//!
//! `epoch` is 0-based. Loss columns are batch means over the epoch; `L_out`
//! is always reported even while inactive, `total` is the objective that was
//! optimized. `p_mpjpe` is empty on epochs without an evaluation.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,L_in,L_proj,L_con,L_out,total,p_mpjpe";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_in: f64,
    pub l_proj: f64,
    pub l_con: f64,
    pub l_out: f64,
    pub total: f64,
    pub p_mpjpe: Option<f64>,
}

pub fn format_metrics(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        write!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},",
            r.epoch, r.l_in, r.l_proj, r.l_con, r.l_out, r.total
        )
        .unwrap();
        if let Some(p) = r.p_mpjpe {
            write!(out, "{p:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_metrics(text: &str, path: &Path) -> Result<Vec<EpochMetrics>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => return Err(err(1, format!("expected header `{METRICS_HEADER}`"))),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(err(i + 1, format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| err(i + 1, format!("`{s}` is not a number")))
            };
            Ok(EpochMetrics {
                epoch: f[0]
                    .parse()
                    .map_err(|_| err(i + 1, format!("`{}` is not an epoch", f[0])))?,
                l_in: num(f[1])?,
                l_proj: num(f[2])?,
                l_con: num(f[3])?,
                l_out: num(f[4])?,
                total: num(f[5])?,
                p_mpjpe: if f[6].is_empty() {
                    None
                } else {
                    Some(num(f[6])?)
                },
            })
        })
        .collect()
}
