//! Static SVG line plots of per-epoch metrics.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trainer::{read_csv, MetricsRecord};

/// Plotted values are clipped to `[LOG_FLOOR, CLIP_MAX]` on log axes and to
/// `CLIP_MAX` in magnitude on linear axes.
pub const CLIP_MAX: f64 = 1e16;
const LOG_FLOOR: f64 = 1e-16;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mse,
    MaE,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::MaE => "ma_e",
        }
    }

    fn of(self, r: &MetricsRecord) -> f64 {
        match self {
            Metric::Mse => r.mse,
            Metric::MaE => r.ma_e,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "ma_e" | "mae" => Ok(Metric::MaE),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

/// One polyline: run id and `(epoch, value)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Epoch-aggregate series per run id, in order of first appearance.
pub fn series_from_records(records: &[MetricsRecord], metric: Metric) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for r in records.iter().filter(|r| r.is_epoch_aggregate()) {
        let point = (r.epoch as f64, metric.of(r));
        match out.iter_mut().find(|s| s.label == r.run_id) {
            Some(s) => s.points.push(point),
            None => out.push(Series {
                label: r.run_id.clone(),
                points: vec![point],
            }),
        }
    }
    out
}

fn clip(v: f64, log_y: bool) -> Option<f64> {
    if v.is_nan() {
        return None;
    }
    if log_y {
        Some(v.clamp(LOG_FLOOR, CLIP_MAX).log10())
    } else {
        Some(v.clamp(-CLIP_MAX, CLIP_MAX))
    }
}

fn fmt_tick(v: f64, log_y: bool) -> String {
    if log_y {
        format!("1e{}", v.round() as i64)
    } else if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders the series to an SVG document. Pure: identical input gives
/// identical bytes. MA-E is always drawn on a log axis.
pub fn render_svg(series: &[Series], metric: Metric, log_y: bool) -> Result<String> {
    let log_y = log_y || metric == Metric::MaE;
    let clipped: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            let pts = s
                .points
                .iter()
                .filter_map(|&(x, y)| clip(y, log_y).map(|y| (x, y)))
                .collect();
            (s.label.clone(), pts)
        })
        .collect();
    let all: Vec<(f64, f64)> = clipped
        .iter()
        .flat_map(|(_, p)| p.iter().copied())
        .collect();
    if all.is_empty() {
        return Err(Error::Format("nothing to plot".into()));
    }

    let (mut x0, mut x1) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
    let (mut y0, mut y1) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if log_y {
        y0 = y0.floor();
        y1 = y1.ceil();
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
    } else {
        let pad = if y1 > y0 {
            0.05 * (y1 - y0)
        } else {
            0.5 * y0.abs().max(1.0)
        };
        y0 -= pad;
        y1 += pad;
    }

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );

    let y_ticks: Vec<f64> = if log_y {
        let step = ((y1 - y0) / 8.0).ceil().max(1.0);
        let mut t = y0;
        let mut v = Vec::new();
        while t <= y1 + 1e-9 {
            v.push(t);
            t += step;
        }
        v
    } else {
        (0..=5).map(|i| y0 + (y1 - y0) * i as f64 / 5.0).collect()
    };
    for t in y_ticks {
        let y = sy(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            fmt_tick(t, log_y)
        );
    }
    let x_steps = ((x1 - x0).round() as usize).clamp(1, 10);
    for i in 0..=x_steps {
        let t = x0 + (x1 - x0) * i as f64 / x_steps as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t:.1}</text>"#,
            sx(t),
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        metric.as_str()
    );

    for (i, (label, pts)) in clipped.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-run="{label}" fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{label}</text>"#,
            lx + 26.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Reads metric CSVs and writes one SVG with a polyline per run.
pub fn emit_plot<P: AsRef<Path>>(
    csv_paths: &[P],
    metric: Metric,
    log_y: bool,
    out: &Path,
) -> Result<()> {
    let mut records = Vec::new();
    for path in csv_paths {
        let path = path.as_ref();
        let file = File::open(path)?;
        let recs = read_csv(BufReader::new(file))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if !recs.iter().any(MetricsRecord::is_epoch_aggregate) {
            return Err(Error::Format(format!(
                "{} has no epoch rows",
                path.display()
            )));
        }
        records.extend(recs);
    }
    let svg = render_svg(&series_from_records(&records, metric), metric, log_y)?;
    std::fs::write(out, svg)?;
    Ok(())
}
