use std::path::{Path, PathBuf};

use crdtsim_core::txpipeline::ValidationMode;

use crate::experiment::{MetricsReport, PointMetrics, SweepParam};
use crate::BenchError;

/// Metrics written by [`emit_tables`], one file each.
pub const METRICS: [&str; 8] = [
    "success_count",
    "failure_count",
    "endorsement_rejections",
    "other_count",
    "total",
    "throughput_tps",
    "avg_latency_ms",
    "merge_time_ms",
];

fn get(p: &PointMetrics, metric: &str) -> String {
    match metric {
        "success_count" => p.success_count.to_string(),
        "failure_count" => p.failure_count.to_string(),
        "endorsement_rejections" => p.endorsement_rejections.to_string(),
        "other_count" => p.other_count.to_string(),
        "total" => p.total.to_string(),
        "throughput_tps" => p.throughput_tps.to_string(),
        "avg_latency_ms" => p.avg_latency_ms.to_string(),
        "merge_time_ms" => p.merge_time_ms.to_string(),
        _ => unreachable!("unknown metric {metric}"),
    }
}

fn set(p: &mut PointMetrics, metric: &str, raw: &str) -> Result<(), BenchError> {
    let bad = || BenchError::Table(format!("{metric}: cannot parse {raw:?}"));
    match metric {
        "success_count" => p.success_count = raw.parse().map_err(|_| bad())?,
        "failure_count" => p.failure_count = raw.parse().map_err(|_| bad())?,
        "endorsement_rejections" => p.endorsement_rejections = raw.parse().map_err(|_| bad())?,
        "other_count" => p.other_count = raw.parse().map_err(|_| bad())?,
        "total" => p.total = raw.parse().map_err(|_| bad())?,
        "throughput_tps" => p.throughput_tps = raw.parse().map_err(|_| bad())?,
        "avg_latency_ms" => p.avg_latency_ms = raw.parse().map_err(|_| bad())?,
        "merge_time_ms" => p.merge_time_ms = raw.parse().map_err(|_| bad())?,
        _ => unreachable!("unknown metric {metric}"),
    }
    Ok(())
}

pub fn table_path(dir: &Path, experiment: &str, metric: &str) -> PathBuf {
    dir.join(format!("{experiment}_{metric}.csv"))
}

/// Sweep values in first-seen order.
fn sweep_values(report: &MetricsReport) -> Vec<f64> {
    let mut values: Vec<f64> = Vec::new();
    for p in &report.points {
        if !values.contains(&p.value) {
            values.push(p.value);
        }
    }
    values
}

/// Writes `<experiment>_<metric>.csv` for every metric: the sweep value
/// first, then one column per mode. Points that failed are listed in
/// `<experiment>_errors.csv`.
pub fn emit_tables(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    std::fs::create_dir_all(dir)?;
    let param = report.param.as_str();
    let values = sweep_values(report);
    let mut written = Vec::new();

    for metric in METRICS {
        let path = table_path(dir, &report.experiment, metric);
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec![param.to_string()];
        header.extend(report.modes.iter().map(ToString::to_string));
        w.write_record(&header)?;
        for &value in &values {
            let mut row = vec![value.to_string()];
            for &mode in &report.modes {
                row.push(report.point(mode, value).map(|p| get(p, metric)).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        written.push(path);
    }

    let path = table_path(dir, &report.experiment, "errors");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([param, "mode", "error"])?;
    for p in &report.points {
        if let Some(e) = &p.error {
            w.write_record([p.value.to_string(), p.mode.to_string(), e.clone()])?;
        }
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}

/// Reads back the tables written by [`emit_tables`].
pub fn parse_tables(dir: &Path, experiment: &str) -> Result<MetricsReport, BenchError> {
    let mut param = None;
    let mut modes: Vec<ValidationMode> = Vec::new();
    let mut points: Vec<PointMetrics> = Vec::new();

    for metric in METRICS {
        let mut r = csv::Reader::from_path(table_path(dir, experiment, metric))?;
        let header = r.headers()?.clone();
        let p = header
            .get(0)
            .and_then(SweepParam::parse)
            .ok_or_else(|| BenchError::Table(format!("{metric}: unknown sweep column")))?;
        let cols: Vec<ValidationMode> = header
            .iter()
            .skip(1)
            .map(|m| m.parse().map_err(BenchError::Table))
            .collect::<Result<_, _>>()?;
        if param.is_none() {
            param = Some(p);
            modes = cols.clone();
        } else if param != Some(p) || modes != cols {
            return Err(BenchError::Table(format!("{metric}: header differs from other tables")));
        }

        for record in r.records() {
            let record = record?;
            let value: f64 = record[0]
                .parse()
                .map_err(|_| BenchError::Table(format!("bad sweep value {:?}", &record[0])))?;
            for (i, &mode) in cols.iter().enumerate() {
                let raw = &record[i + 1];
                if raw.is_empty() {
                    continue;
                }
                let idx = match points.iter().position(|q| q.mode == mode && q.value == value) {
                    Some(idx) => idx,
                    None => {
                        points.push(blank(mode, value));
                        points.len() - 1
                    }
                };
                set(&mut points[idx], metric, raw)?;
            }
        }
    }

    let mut r = csv::Reader::from_path(table_path(dir, experiment, "errors"))?;
    for record in r.records() {
        let record = record?;
        let value: f64 = record[0]
            .parse()
            .map_err(|_| BenchError::Table(format!("bad sweep value {:?}", &record[0])))?;
        let mode: ValidationMode = record[1].parse().map_err(BenchError::Table)?;
        if let Some(p) = points.iter_mut().find(|q| q.mode == mode && q.value == value) {
            p.error = Some(record[2].to_string());
        }
    }

    // Same order as the runner: mode-major, then sweep order.
    let values: Vec<f64> = {
        let mut v = Vec::new();
        for p in &points {
            if !v.contains(&p.value) {
                v.push(p.value);
            }
        }
        v
    };
    points.sort_by_key(|p| {
        (
            modes.iter().position(|m| *m == p.mode),
            values.iter().position(|v| *v == p.value),
        )
    });

    Ok(MetricsReport {
        experiment: experiment.to_string(),
        param: param.expect("at least one metric table"),
        modes,
        points,
    })
}

fn blank(mode: ValidationMode, value: f64) -> PointMetrics {
    PointMetrics {
        mode,
        value,
        total: 0,
        success_count: 0,
        failure_count: 0,
        endorsement_rejections: 0,
        other_count: 0,
        throughput_tps: 0.0,
        avg_latency_ms: 0.0,
        merge_time_ms: 0.0,
        error: None,
    }
}
