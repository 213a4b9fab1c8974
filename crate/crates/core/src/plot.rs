//! Minimal deterministic SVG line charts with a log-scale y axis.

use std::fmt::Write;

use crate::simulator::MetricsRecord;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 40.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub series: Vec<Series>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Points usable on a log axis.
fn visible(points: &[(f64, f64)]) -> impl Iterator<Item = (f64, f64)> + '_ {
    points
        .iter()
        .copied()
        .filter(|&(x, y)| x.is_finite() && y.is_finite() && y > 0.0)
}

/// Lays `panels` out in a row-major grid with `cols` columns.
pub fn render(panels: &[Panel], cols: usize) -> String {
    let cols = cols.max(1).min(panels.len().max(1));
    let rows = panels.len().div_ceil(cols).max(1);
    let (w, h) = (PANEL_W * cols as f64, PANEL_H * rows as f64);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);
    for (k, panel) in panels.iter().enumerate() {
        let ox = PANEL_W * (k % cols) as f64;
        let oy = PANEL_H * (k / cols) as f64;
        draw_panel(&mut out, panel, ox, oy);
    }
    out.push_str("</svg>\n");
    out
}

fn draw_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let (x0, x1) = (ox + MARGIN_L, ox + PANEL_W - MARGIN_R);
    let (y0, y1) = (oy + MARGIN_T, oy + PANEL_H - MARGIN_B);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
        (x0 + x1) / 2.0,
        oy + 18.0,
        esc(&panel.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
        x1 - x0,
        y1 - y0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        y1 + 32.0,
        esc(&panel.x_label)
    );

    let pts: Vec<(f64, f64)> = panel.series.iter().flat_map(|s| visible(&s.points)).collect();
    if pts.is_empty() {
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="#888">no positive data</text>"##,
            (x0 + x1) / 2.0,
            (y0 + y1) / 2.0
        );
        return;
    }
    let (mut xmin, mut xmax) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if xmax <= xmin {
        xmin -= 0.5;
        xmax += 0.5;
    }
    let (lmin, lmax) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        (a.min(p.1.log10()), b.max(p.1.log10()))
    });
    let (dmin, mut dmax) = (lmin.floor(), lmax.ceil());
    if dmax <= dmin {
        dmax = dmin + 1.0;
    }
    let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * (x1 - x0);
    let sy = |y: f64| y1 - (y.log10() - dmin) / (dmax - dmin) * (y1 - y0);

    // decade gridlines, thinned to at most ~8 labels
    let decades = (dmax - dmin) as i64;
    let stride = (decades / 8 + 1).max(1);
    let mut d = dmin as i64;
    while d <= dmax as i64 {
        let y = sy(10f64.powi(d as i32));
        let _ = writeln!(
            out,
            r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#ddd"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"#,
            x0 - 4.0,
            y + 4.0
        );
        d += stride;
    }
    for k in 0..=4 {
        let x = xmin + (xmax - xmin) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(x),
            y1 + 14.0,
            fmt_tick(x)
        );
    }

    for (k, s) in panel.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = visible(&s.points)
            .map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if path.is_empty() {
            continue;
        }
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            path.join(" ")
        );
        let ly = y0 + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"{dash}/>"#,
            x1 - 110.0,
            ly - 4.0,
            x1 - 92.0,
            ly - 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#,
            x1 - 88.0,
            esc(&s.label)
        );
    }
}

fn fmt_tick(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e9 {
        format!("{}", x as i64)
    } else {
        format!("{x:.3}")
    }
}

/// `fnat_sq` and `psi_gap` against round, one series per algorithm label.
pub fn convergence_panels(runs: &[(String, Vec<MetricsRecord>)]) -> Vec<Panel> {
    let series = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| -> Vec<Series> {
        runs.iter()
            .enumerate()
            .map(|(k, (label, recs))| Series {
                label: label.clone(),
                points: recs.iter().filter_map(|r| f(r).map(|v| (r.round as f64, v))).collect(),
                dashed: k % 2 == 1,
            })
            .collect()
    };
    vec![
        Panel {
            title: "natural map ||F_nat||^2".into(),
            x_label: "round".into(),
            series: series(&|r| Some(r.fnat_sq)),
        },
        Panel {
            title: "optimality gap psi - psi*".into(),
            x_label: "round".into(),
            series: series(&|r| r.psi_gap),
        },
    ]
}

pub fn convergence_svg(runs: &[(String, Vec<MetricsRecord>)]) -> String {
    render(&convergence_panels(runs), 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(points: Vec<(f64, f64)>) -> Panel {
        Panel {
            title: "t <1>".into(),
            x_label: "round".into(),
            series: vec![Series {
                label: "a&b".into(),
                points,
                dashed: false,
            }],
        }
    }

    #[test]
    fn deterministic_and_escaped() {
        let p = panel(vec![(0.0, 1.0), (1.0, 0.1), (2.0, 1e-3)]);
        let a = render(&[p.clone(), p.clone()], 2);
        assert_eq!(a, render(&[p.clone(), p], 2));
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert!(a.contains("t &lt;1&gt;"));
        assert!(a.contains("a&amp;b"));
        assert!(a.contains("1e-3"));
        assert_eq!(a.matches("<polyline").count(), 2);
    }

    #[test]
    fn skips_non_positive_values() {
        let svg = render(&[panel(vec![(0.0, 0.0), (1.0, f64::NAN), (2.0, -1.0)])], 1);
        assert!(svg.contains("no positive data"));
        let svg = render(&[panel(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 3.0)])], 1);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn single_point_does_not_divide_by_zero() {
        let svg = render(&[panel(vec![(3.0, 5.0)])], 1);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
