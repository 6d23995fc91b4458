use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::metrics::{MetricsTable, LAMBDA_AGENTS_FILE, METRICS_FILE};

pub const LAMBDA_CHART: &str = "lambda.svg";
pub const OBJECTIVE_CHART: &str = "objective.svg";

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];
const WIDTH: f64 = 860.0;
const PANEL_HEIGHT: f64 = 280.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, xs: &[f64], ys: &[f64]) -> Self {
        Self {
            name: name.into(),
            points: xs.iter().copied().zip(ys.iter().copied()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Panel {
    pub title: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub zero_line: bool,
}

fn range(values: impl Iterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        let pad = if lo == 0.0 { 1.0 } else { 0.5 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let raw = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e5 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_panel(out: &mut String, panel: &Panel, top: f64, x_label: &str) {
    let (x0, x1) = range(panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), false);
    let (y0, y1) = range(
        panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)),
        panel.zero_line,
    );
    let w = WIDTH - LEFT - RIGHT;
    let h = PANEL_HEIGHT - TOP - BOTTOM;
    let (ox, oy) = (LEFT, top + TOP);
    let px = |x: f64| ox + (x - x0) / (x1 - x0) * w;
    let py = |y: f64| oy + h - (y - y0) / (y1 - y0) * h;

    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="15" text-anchor="middle">{}</text>"#,
        ox + w / 2.0,
        top + 24.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{ox:.1}" y="{oy:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#333"/>"##
    );
    for t in ticks(x0, x1, 6) {
        let x = px(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#333"/><text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"##,
            oy + h,
            oy + h + 5.0,
            oy + h + 18.0,
            label(t)
        );
    }
    for t in ticks(y0, y1, 5) {
        let y = py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{ox:.1}" y2="{y:.1}" stroke="#333"/><line x1="{ox:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"##,
            ox - 5.0,
            ox + w,
            ox - 8.0,
            y + 4.0,
            label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
        ox + w / 2.0,
        oy + h + 38.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        ox - 58.0,
        oy + h / 2.0,
        ox - 58.0,
        oy + h / 2.0,
        escape(&panel.y_label)
    );
    if panel.zero_line {
        let y = py(0.0);
        let _ = writeln!(
            out,
            r##"<line x1="{ox:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#000" stroke-dasharray="6 4"/>"##,
            ox + w
        );
    }
    for (i, s) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        let ly = oy + 12.0 + 18.0 * i as f64;
        let lx = ox + w + 15.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
}

/// Stacked line-chart panels sharing an x label.
pub fn render_svg(panels: &[Panel], x_label: &str) -> String {
    let height = PANEL_HEIGHT * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, i as f64 * PANEL_HEIGHT, x_label);
    }
    out.push_str("</svg>\n");
    out
}

fn col<'a>(t: &'a MetricsTable, name: &str) -> &'a [f64] {
    t.column(name).unwrap_or(&[])
}

/// The two chart layouts built from a metrics table and, optionally, the
/// per-agent multiplier table.
pub fn chart_panels(metrics: &MetricsTable, lambdas: Option<&MetricsTable>) -> (Vec<Panel>, Vec<Panel>) {
    let step = col(metrics, "step");
    let mut components = Vec::new();
    match lambdas {
        Some(l) if !l.header.is_empty() => {
            let ls = col(l, "step");
            for name in l.header.iter().skip(1) {
                let pretty = name.strip_prefix("lambda_").unwrap_or(name).replacen('_', ", k=", 1);
                components.push(Series::new(format!("agent {pretty}"), ls, col(l, name)));
            }
        }
        _ => {
            for name in metrics.indexed("lambda_mean_") {
                components.push(Series::new(name, step, col(metrics, name)));
            }
        }
    }
    let lambda = vec![
        Panel {
            title: "Local multiplier estimates".into(),
            y_label: "lambda".into(),
            series: components,
            zero_line: false,
        },
        Panel {
            title: "Multiplier disagreement".into(),
            y_label: "||lambda_perp||".into(),
            series: vec![Series::new("||lambda_perp||", step, col(metrics, "lambda_disagreement"))],
            zero_line: true,
        },
    ];
    let gaps = metrics
        .indexed("G_gap_")
        .into_iter()
        .map(|name| {
            let k = name.trim_start_matches("G_gap_");
            Series::new(format!("<G> - b, k={k}"), step, col(metrics, name))
        })
        .collect();
    let objective = vec![
        Panel {
            title: "Global objective cost".into(),
            y_label: "J".into(),
            series: vec![Series::new("J", step, col(metrics, "J"))],
            zero_line: false,
        },
        Panel {
            title: "Global constraint cost".into(),
            y_label: "<G> - b".into(),
            series: gaps,
            zero_line: true,
        },
    ];
    (lambda, objective)
}

/// Read `metrics.csv` (and `lambda_agents.csv` if present) from `dir`, write
/// both charts next to them and return their paths.
pub fn emit_report(dir: &Path) -> Result<Vec<PathBuf>> {
    let mpath = dir.join(METRICS_FILE);
    let metrics = MetricsTable::read(&mpath)?;
    metrics.require(&["step", "J", "lambda_disagreement"], &mpath)?;
    let gaps = metrics.indexed("G_gap_").len();
    let means = metrics.indexed("lambda_mean_").len();
    if gaps != means {
        let missing: Vec<String> = (gaps.min(means) + 1..=gaps.max(means))
            .map(|i| {
                if gaps < means {
                    format!("G_gap_{i}")
                } else {
                    format!("lambda_mean_{i}")
                }
            })
            .collect();
        return Err(Error::Parse {
            path: mpath,
            message: format!("missing columns: {}", missing.join(", ")),
        });
    }
    let lpath = dir.join(LAMBDA_AGENTS_FILE);
    let lambdas = if lpath.is_file() {
        let l = MetricsTable::read(&lpath)?;
        l.require(&["step"], &lpath)?;
        Some(l)
    } else {
        None
    };
    let (lambda, objective) = chart_panels(&metrics, lambdas.as_ref());
    let mut written = Vec::new();
    for (name, panels) in [(LAMBDA_CHART, lambda), (OBJECTIVE_CHART, objective)] {
        let p = dir.join(name);
        std::fs::write(&p, render_svg(&panels, "iteration")).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "step,J,G_gap_1,lambda_mean_1,lambda_disagreement,critic_disagreement,alpha,beta,gamma\n";

    #[test]
    fn empty_metrics_give_axes_only() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(METRICS_FILE), HEADER).unwrap();
        let files = emit_report(dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        for f in files {
            let svg = std::fs::read_to_string(f).unwrap();
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
            assert!(!svg.contains("<polyline"));
            assert!(svg.contains("<rect x="));
        }
    }

    #[test]
    fn constant_multipliers_draw_flat_lines() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = HEADER.to_string();
        for s in 0..5 {
            text.push_str(&format!("{},-1.0,0.0,0.3,0.0,0.0,1.0,1.0,1.0\n", s * 10));
        }
        std::fs::write(dir.path().join(METRICS_FILE), text).unwrap();
        let t = MetricsTable::read(&dir.path().join(METRICS_FILE)).unwrap();
        let (lambda, _) = chart_panels(&t, None);
        assert!(lambda[0].series[0].points.iter().all(|p| p.1 == 0.3));
        assert!(lambda[1].series[0].points.iter().all(|p| p.1 == 0.0));
        let svg = render_svg(&lambda, "iteration");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("stroke-dasharray"));
    }

    #[test]
    fn missing_columns_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(METRICS_FILE), "step,G_gap_1\n0,0.1\n").unwrap();
        let msg = emit_report(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("J") && msg.contains("lambda_disagreement"), "{msg}");
    }

    #[test]
    fn tick_positions_are_round() {
        assert_eq!(ticks(0.0, 10.0, 5), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(range([2.0, 2.0].into_iter(), false), (1.0, 3.0));
        assert_eq!(range(std::iter::empty(), false), (0.0, 1.0));
    }
}
