//! Static SVG line charts over run directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::Value;

use crate::error::{io_at, CliError, Result};
use crate::runs::{self, METRICS_FILE, PASSK_FILE};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 220.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const DASHES: [&str; 4] = ["none", "6 3", "2 3", "8 3 2 3"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Entropy,
    Reward,
    Passk,
    Length,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::Entropy, PlotKind::Reward, PlotKind::Passk, PlotKind::Length];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Entropy => "entropy",
            PlotKind::Reward => "reward",
            PlotKind::Passk => "passk",
            PlotKind::Length => "length",
        }
    }

    fn metric(self) -> Option<&'static str> {
        match self {
            PlotKind::Entropy => Some("batch_entropy"),
            PlotKind::Reward => Some("mean_reward"),
            PlotKind::Length => Some("mean_resp_len"),
            PlotKind::Passk => None,
        }
    }

    fn y_label(self) -> &'static str {
        match self {
            PlotKind::Entropy => "batch entropy (nats)",
            PlotKind::Reward => "mean reward",
            PlotKind::Length => "mean response length",
            PlotKind::Passk => "pass@k",
        }
    }
}

impl FromStr for PlotKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            CliError::Usage(format!("unknown plot kind `{s}`; expected entropy, reward, passk or length"))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Series {
    name: String,
    points: Vec<(f64, f64)>,
    /// Target entropy, drawn as a reference line on entropy plots.
    target: Option<f64>,
}

fn run_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn field(rec: &Value, key: &str, path: &Path) -> Result<f64> {
    rec.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| CliError::MissingMetric { path: path.to_path_buf(), key: key.to_string() })
}

fn step_series(dir: &Path, kind: PlotKind, key: &str) -> Result<Series> {
    let path = dir.join(METRICS_FILE);
    let records = runs::read_metrics(&path)?;
    let mut points = Vec::with_capacity(records.len());
    for rec in &records {
        points.push((field(rec, "step", &path)?, field(rec, key, &path)?));
    }
    let target = match (kind, records.last()) {
        (PlotKind::Entropy, Some(rec)) => Some(field(rec, "target_entropy", &path)?).filter(|h| *h > 0.0),
        _ => None,
    };
    Ok(Series { name: run_name(dir), points, target })
}

fn passk_series(dir: &Path) -> Result<Series> {
    let path = dir.join(PASSK_FILE);
    let text = io_at(&path, fs::read_to_string(&path))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let col = header
        .split(',')
        .position(|c| c == "aggregate")
        .ok_or_else(|| CliError::MissingMetric { path: path.clone(), key: "aggregate".into() })?;
    let mut points = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Result<f64> {
            cells
                .get(i)
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| CliError::Usage(format!("{}: malformed row `{line}`", path.display())))
        };
        points.push((parse(0)?, parse(col)?));
    }
    Ok(Series { name: run_name(dir), points, target: None })
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let m = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log2_x: bool,
}

impl Frame {
    fn tx(&self, x: f64) -> f64 {
        let (x, x0, x1) = if self.log2_x { (x.log2(), self.x0.log2(), self.x1.log2()) } else { (x, self.x0, self.x1) };
        LEFT + (x - x0) / (x1 - x0).max(1e-12) * (WIDTH - LEFT - RIGHT)
    }

    fn ty(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0).max(1e-12) * (HEIGHT - TOP - BOTTOM)
    }
}

fn render(kind: PlotKind, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let mut ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    ys.extend(series.iter().filter_map(|s| s.target).flat_map(|h| [0.75 * h, 1.25 * h]));
    let (mut y0, mut y1) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    y0 = y0.min(0.0);
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let (x0, x1) = if x0.is_finite() { (x0, x1.max(x0 + 1.0)) } else { (1.0, 2.0) };
    let f = Frame { x0, x1, y0, y1, log2_x: kind == PlotKind::Passk };

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        kind.name()
    )
    .unwrap();

    for (i, s) in series.iter().enumerate() {
        if let (PlotKind::Entropy, Some(h)) = (kind, s.target) {
            let color = COLORS[i % COLORS.len()];
            let (ya, yb) = (f.ty(1.25 * h), f.ty(0.75 * h));
            writeln!(
                svg,
                r#"<rect class="band" x="{LEFT}" y="{ya:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.08"/>"#,
                WIDTH - LEFT - RIGHT,
                yb - ya
            )
            .unwrap();
            let y = f.ty(h);
            writeln!(
                svg,
                r#"<line class="target" x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="1" stroke-dasharray="4 4"/>"#,
                WIDTH - RIGHT
            )
            .unwrap();
            writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" fill="{color}">H* {}</text>"#,
                WIDTH - RIGHT + 4.0,
                y + 3.0,
                fmt_tick(h)
            )
            .unwrap();
        }
    }

    let (bx, by) = (LEFT, HEIGHT - BOTTOM);
    writeln!(svg, r#"<line x1="{bx}" y1="{by}" x2="{}" y2="{by}" stroke="black"/>"#, WIDTH - RIGHT).unwrap();
    writeln!(svg, r#"<line x1="{bx}" y1="{TOP}" x2="{bx}" y2="{by}" stroke="black"/>"#).unwrap();
    let xticks: Vec<f64> = if f.log2_x {
        let mut ks: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        ks.sort_by(f64::total_cmp);
        ks.dedup();
        ks
    } else {
        ticks(f.x0, f.x1)
    };
    for x in xticks {
        let px = f.tx(x);
        writeln!(svg, r#"<line x1="{px:.2}" y1="{by}" x2="{px:.2}" y2="{}" stroke="black"/>"#, by + 4.0).unwrap();
        writeln!(
            svg,
            r#"<text class="xtick" x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            by + 18.0,
            fmt_tick(x)
        )
        .unwrap();
    }
    for y in ticks(f.y0, f.y1) {
        let py = f.ty(y);
        writeln!(svg, r#"<line x1="{}" y1="{py:.2}" x2="{bx}" y2="{py:.2}" stroke="black"/>"#, bx - 4.0).unwrap();
        writeln!(
            svg,
            r#"<text class="ytick" x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            bx - 7.0,
            py + 4.0,
            fmt_tick(y)
        )
        .unwrap();
    }
    let x_label = if f.log2_x { "k (log2 scale)" } else { "iteration" };
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 12.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        kind.y_label()
    )
    .unwrap();

    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.tx(x), f.ty(y))).collect();
        writeln!(
            svg,
            r#"<polyline class="series" data-run="{}" fill="none" stroke="{}" stroke-width="1.5" stroke-dasharray="{}" points="{}"/>"#,
            escape(&s.name),
            COLORS[i % COLORS.len()],
            DASHES[i % DASHES.len()],
            pts.join(" ")
        )
        .unwrap();
    }

    writeln!(svg, r#"<g class="legend">"#).unwrap();
    for (i, s) in series.iter().enumerate() {
        let y = TOP + 8.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 60.0;
        writeln!(
            svg,
            r#"<line x1="{lx}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2" stroke-dasharray="{}"/>"#,
            lx + 24.0,
            COLORS[i % COLORS.len()],
            DASHES[i % DASHES.len()]
        )
        .unwrap();
        writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, y + 4.0, escape(&s.name)).unwrap();
    }
    writeln!(svg, "</g>\n</svg>").unwrap();
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders one chart of `kind` with a series per run directory.
pub fn plot(kind: PlotKind, run_dirs: &[PathBuf]) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(CliError::Usage("plot needs at least one run directory".into()));
    }
    let series = run_dirs
        .iter()
        .map(|d| match kind.metric() {
            Some(key) => step_series(d, kind, key),
            None => passk_series(d),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(render(kind, &series))
}

/// Writes `<out>/<kind>.svg` and returns its path.
pub fn write_plot(kind: PlotKind, run_dirs: &[PathBuf], out: &Path) -> Result<PathBuf> {
    let svg = plot(kind, run_dirs)?;
    io_at(out, fs::create_dir_all(out))?;
    let path = out.join(format!("{}.svg", kind.name()));
    io_at(&path, fs::write(&path, svg))?;
    Ok(path)
}
