//! Static SVG skeleton renderings: detection, ground truth and prediction
//! side by side. 3D poses are drawn orthographically in their camera frame
//! (x right, y down), so they line up with the detection panel.

use std::fmt::Write as _;

use mvlift_core::{Pose2D, Pose3D};

const PANEL: f64 = 260.0;
const MARGIN: f64 = 20.0;
const TITLE: f64 = 24.0;

struct Panel<'a> {
    title: &'a str,
    points: Vec<(f64, f64)>,
    color: &'a str,
}

fn fit(sets: &[&[(f64, f64)]]) -> impl Fn((f64, f64)) -> (f64, f64) {
    let all = sets.iter().flat_map(|s| s.iter());
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in all {
        lo_x = lo_x.min(x);
        lo_y = lo_y.min(y);
        hi_x = hi_x.max(x);
        hi_y = hi_y.max(y);
    }
    let span = (hi_x - lo_x).max(hi_y - lo_y).max(1e-9);
    let scale = (PANEL - 2.0 * MARGIN) / span;
    let (cx, cy) = ((lo_x + hi_x) / 2.0, (lo_y + hi_y) / 2.0);
    move |(x, y)| {
        (
            PANEL / 2.0 + (x - cx) * scale,
            TITLE + PANEL / 2.0 + (y - cy) * scale,
        )
    }
}

/// Three panels; the two 3D panels share one scale so their sizes compare.
pub fn skeleton_svg(
    parents: &[Option<usize>],
    title: &str,
    detection: &Pose2D,
    gt: &Pose3D,
    pred: &Pose3D,
) -> String {
    let flat = |p: &Pose3D| p.landmarks.iter().map(|v| (v.x, v.y)).collect::<Vec<_>>();
    let panels = [
        Panel {
            title: "2D detection",
            points: detection.landmarks.iter().map(|v| (v.x, v.y)).collect(),
            color: "#444444",
        },
        Panel {
            title: "ground truth",
            points: flat(gt),
            color: "#1f77b4",
        },
        Panel {
            title: "prediction",
            points: flat(pred),
            color: "#d62728",
        },
    ];
    let map_2d = fit(&[&panels[0].points]);
    let map_3d = fit(&[&panels[1].points, &panels[2].points]);

    let width = 3.0 * PANEL;
    let height = PANEL + TITLE + 16.0;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
        width / 2.0,
        height - 4.0,
        escape(title)
    )
    .unwrap();
    for (k, panel) in panels.iter().enumerate() {
        let dx = k as f64 * PANEL;
        let map: &dyn Fn((f64, f64)) -> (f64, f64) = if k == 0 { &map_2d } else { &map_3d };
        let pts: Vec<(f64, f64)> = panel.points.iter().map(|&p| map(p)).collect();
        writeln!(out, r#"<g transform="translate({dx:.1},0)">"#).unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="16" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
            PANEL / 2.0,
            panel.title
        )
        .unwrap();
        for (child, parent) in parents.iter().enumerate() {
            if let Some(p) = parent {
                let (a, b) = (pts[child], pts[*p]);
                writeln!(
                    out,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/>"#,
                    a.0, a.1, b.0, b.1, panel.color
                )
                .unwrap();
            }
        }
        for (x, y) in &pts {
            writeln!(
                out,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{}"/>"#,
                panel.color
            )
            .unwrap();
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use mvlift_core::Frame;

    #[test]
    fn draws_one_line_per_bone_in_each_panel() {
        let parents = [None, Some(0), Some(1)];
        let det = Pose2D::pixels(vec![
            [0.0, 0.0].into(),
            [10.0, 0.0].into(),
            [10.0, 10.0].into(),
        ]);
        let pose = Pose3D::from_flat(
            &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
            Frame::Camera(0),
            true,
        );
        let svg = skeleton_svg(&parents, "a<b", &det, &pose, &pose);
        assert_eq!(svg.matches("<line").count(), 6);
        assert_eq!(svg.matches("<circle").count(), 9);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
