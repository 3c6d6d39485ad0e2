//! CSV series and simple SVG line plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::BenchError;

/// One named column pair written as `<x_name>,<y_name>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub x_name: String,
    pub y_name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: &str, x_name: &str, y_name: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            x_name: x_name.into(),
            y_name: y_name.into(),
            points,
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.3}")
    }
}

/// Renders a series as CSV. Values are printed with fixed precision so that
/// equal inputs give byte-identical files.
pub fn to_csv(series: &Series) -> Result<Vec<u8>, BenchError> {
    if series.points.is_empty() {
        return Err(BenchError::EmptySeries);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([&series.x_name, &series.y_name])?;
    for (x, y) in &series.points {
        w.write_record([fmt_num(*x), fmt_num(*y)])?;
    }
    w.into_inner().map_err(|e| BenchError::Io(e.into_error()))
}

pub fn write_csv(dir: &Path, file: &str, series: &Series) -> Result<PathBuf, BenchError> {
    let bytes = to_csv(series)?;
    let path = dir.join(file);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, bytes)?;
    Ok(path)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Line plot of several series sharing the axes. `log_x` spaces x on a log scale.
pub fn svg_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_x: bool,
) -> Result<String, BenchError> {
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .collect();
    if all.is_empty() {
        return Err(BenchError::EmptySeries);
    }
    let tx = |x: f64| if log_x { x.max(1e-9).log10() } else { x };
    let (x0, x1) = all
        .iter()
        .map(|p| tx(p.0))
        .fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(x), b.max(x)));
    let y1 = all.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-9) * 1.05;
    let xspan = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| PAD + (tx(x) - x0) / xspan * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - y / y1 * (H - 2.0 * PAD);

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#).ok();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).ok();
    writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    )
    .ok();
    writeln!(
        s,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    )
    .ok();
    writeln!(
        s,
        r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD
    )
    .ok();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 15.0,
        escape(x_label)
    )
    .ok();
    writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    )
    .ok();
    for i in 0..=4 {
        let y = y1 * i as f64 / 4.0;
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            PAD - 5.0,
            py(y) + 4.0,
            fmt_num((y * 10.0).round() / 10.0)
        )
        .ok();
    }
    let mut ticks: Vec<f64> = all.iter().map(|p| p.0).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    let stride = ticks.len().div_ceil(10).max(1);
    for x in ticks.iter().step_by(stride) {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            px(*x),
            H - PAD + 16.0,
            fmt_num(*x)
        )
        .ok();
    }
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|(x, y)| format!("{:.1},{:.1}", px(*x), py(*y)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        )
        .ok();
        writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 * i as f64,
            escape(&ser.name)
        )
        .ok();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_svg(dir: &Path, file: &str, svg: &str) -> Result<PathBuf, BenchError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(file);
    fs::write(&path, svg)?;
    Ok(path)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_fixed_header_and_stable_numbers() {
        let s = Series::new(
            "baseline",
            "backlog",
            "latency_ms",
            vec![(1.0, 2.5), (5.0, 10.0), (10.0, 1.0 / 3.0)],
        );
        let text = String::from_utf8(to_csv(&s).unwrap()).unwrap();
        assert_eq!(text, "backlog,latency_ms\n1,2.500\n5,10\n10,0.333\n");
    }

    #[test]
    fn empty_series_is_an_error() {
        let s = Series::new("x", "t_s", "ops_per_s", Vec::new());
        assert!(matches!(to_csv(&s), Err(BenchError::EmptySeries)));
        assert!(matches!(
            svg_plot("t", "x", "y", &[s], false),
            Err(BenchError::EmptySeries)
        ));
    }

    #[test]
    fn svg_contains_one_polyline_per_series() {
        let a = Series::new("a", "x", "y", vec![(1.0, 1.0), (10.0, 5.0)]);
        let b = Series::new("b<", "x", "y", vec![(1.0, 2.0), (10.0, 3.0)]);
        let svg = svg_plot("plot", "x", "y", &[a, b], true).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;"));
        assert!(svg.starts_with("<svg"));
    }
}
