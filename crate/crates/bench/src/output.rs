//! Writes experiment results to an output directory.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::leader::{LeaderFailureParams, LeaderFailureReport};
use crate::ordering::OrderingPoint;
use crate::overhead::OverheadPoint;
use crate::report::{svg_plot, write_csv, write_svg, Series};
use crate::BenchError;

fn curve(
    name: &str,
    y_name: &str,
    points: &[OverheadPoint],
    y: impl Fn(&OverheadPoint) -> f64,
) -> Series {
    Series::new(
        name,
        "backlog",
        y_name,
        points.iter().map(|p| (p.backlog as f64, y(p))).collect(),
    )
}

/// `<series>/latency.csv` and `<series>/throughput.csv` per series, plus two plots.
pub fn write_overhead(
    dir: &Path,
    runs: &[(&str, &[OverheadPoint])],
) -> Result<Vec<PathBuf>, BenchError> {
    let mut files = Vec::new();
    let mut lat = Vec::new();
    let mut thr = Vec::new();
    for (name, points) in runs {
        let l = curve(name, "latency_ms", points, |p| p.summary.latency_ms);
        let t = curve(name, "ops_per_s", points, |p| p.summary.throughput);
        files.push(write_csv(dir, &format!("{name}/latency.csv"), &l)?);
        files.push(write_csv(dir, &format!("{name}/throughput.csv"), &t)?);
        lat.push(l);
        thr.push(t);
    }
    files.push(write_svg(
        dir,
        "latency.svg",
        &svg_plot("Latency vs backlog", "backlog", "latency (ms)", &lat, true)?,
    )?);
    files.push(write_svg(
        dir,
        "throughput.svg",
        &svg_plot("Throughput vs backlog", "backlog", "ops/s", &thr, true)?,
    )?);
    Ok(files)
}

/// `throughput_ts.csv`, `recovery.json` and a time-series plot.
pub fn write_leader(
    dir: &Path,
    params: &LeaderFailureParams,
    r: &LeaderFailureReport,
) -> Result<Vec<PathBuf>, BenchError> {
    let ts = Series::new(
        "throughput",
        "t_s",
        "ops_per_s",
        r.rates
            .iter()
            .enumerate()
            .map(|(i, v)| (i as f64, *v))
            .collect(),
    );
    let mut files = vec![write_csv(dir, "throughput_ts.csv", &ts)?];
    let summary = json!({
        "crashedUnit": r.crashed_unit,
        "crashAtS": params.crash_at_s,
        "workloadOpsPerS": params.workload,
        "preCrashMean": r.recovery.pre_crash_mean,
        "dipWindow": r.recovery.dip_window,
        "recoveredWindow": r.recovery.recovered_window,
        "recoveryS": r.recovery_s(params.crash_at_s),
        "outageS": r.outage_s,
        "tLeadS": r.t_lead_s,
        "preCrashLatencyMs": r.pre_crash_latency_ms,
        "peakLatencyMs": r.peak_latency_ms,
        "emitted": r.emitted,
        "delivered": r.delivered,
    });
    let path = dir.join("recovery.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&summary).expect("json") + "\n",
    )?;
    files.push(path);
    files.push(write_svg(
        dir,
        "throughput_ts.svg",
        &svg_plot(
            "Throughput under leader failure",
            "time (s)",
            "ops/s",
            &[ts],
            false,
        )?,
    )?);
    Ok(files)
}

/// `ordering.csv` with one row per (payload, clients) point, plus a plot.
pub fn write_ordering(dir: &Path, points: &[OrderingPoint]) -> Result<Vec<PathBuf>, BenchError> {
    if points.is_empty() {
        return Err(BenchError::EmptySeries);
    }
    std::fs::create_dir_all(dir)?;
    let path = dir.join("ordering.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["clients", "payload_bytes", "ops_per_s", "latency_ms"])?;
    for p in points {
        w.write_record([
            p.clients.to_string(),
            p.payload_bytes.to_string(),
            format!("{:.3}", p.throughput),
            format!("{:.3}", p.latency_ms),
        ])?;
    }
    w.flush()?;
    let mut payloads: Vec<usize> = points.iter().map(|p| p.payload_bytes).collect();
    payloads.dedup();
    let series: Vec<Series> = payloads
        .iter()
        .map(|b| {
            let pts = points
                .iter()
                .filter(|p| p.payload_bytes == *b)
                .map(|p| (p.throughput, p.latency_ms))
                .collect();
            Series::new(&format!("{b} B"), "ops_per_s", "latency_ms", pts)
        })
        .collect();
    let svg = svg_plot(
        "Latency vs throughput",
        "throughput (ops/s)",
        "latency (ms)",
        &series,
        false,
    )?;
    Ok(vec![path, write_svg(dir, "ordering.svg", &svg)?])
}
