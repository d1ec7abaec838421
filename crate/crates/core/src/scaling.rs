//! Strong and weak scaling sweeps, metric rows and their CSV form.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{self, EngineError, RunReport, SimConfig};
use crate::topology::GridSpec;

pub const CSV_HEADER: &str = "run_id,grid_w,grid_h,workers,sim_ms,wall_s,recurrent_events,external_events,total_events,time_per_event_s,speedup,bytes_accounted,bytes_per_synapse,spikes_total,mean_rate_hz";

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid sweep: {0}")]
    Config(String),
    #[error("event counts differ between {0} and {1} workers")]
    Nondeterministic(u32, u32),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One run, one CSV row. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub grid_w: u32,
    pub grid_h: u32,
    pub workers: u32,
    pub sim_ms: f64,
    pub wall_s: f64,
    pub recurrent_events: u64,
    pub external_events: u64,
    pub total_events: u64,
    pub time_per_event_s: Option<f64>,
    /// Wall time of the one-worker run of the same problem over this one.
    pub speedup: Option<f64>,
    pub bytes_accounted: u64,
    pub bytes_per_synapse: Option<f64>,
    pub spikes_total: u64,
    pub mean_rate_hz: f64,
}

impl MetricRow {
    pub fn from_report(run_id: impl Into<String>, config: &SimConfig, report: &RunReport) -> Self {
        MetricRow {
            run_id: run_id.into(),
            grid_w: config.grid.width,
            grid_h: config.grid.height,
            workers: config.workers,
            sim_ms: report.sim_ms,
            wall_s: report.wall_seconds,
            recurrent_events: report.recurrent_events,
            external_events: report.external_events,
            total_events: report.total_events,
            time_per_event_s: report.time_per_event,
            speedup: None,
            bytes_accounted: report.peak_accounted_bytes(),
            bytes_per_synapse: report.bytes_per_synapse(),
            spikes_total: report.spikes_total,
            mean_rate_hz: report.mean_rate_hz,
        }
    }

    /// Time per synaptic event multiplied by the number of workers; flat
    /// under ideal weak scaling.
    pub fn time_per_event_per_worker(&self) -> Option<f64> {
        self.time_per_event_s.map(|t| t * f64::from(self.workers))
    }
}

fn validate_workers(workers: &[u32]) -> Result<(), ScalingError> {
    if workers.is_empty() {
        return Err(ScalingError::Config("empty worker list".into()));
    }
    if workers.contains(&0) {
        return Err(ScalingError::Config(
            "worker counts must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Runs `config` `repeats` times and keeps the fastest run.
fn best_of(config: &SimConfig, repeats: u32) -> Result<RunReport, EngineError> {
    let mut best: Option<RunReport> = None;
    for _ in 0..repeats.max(1) {
        let report = engine::run(config)?.report;
        if best
            .as_ref()
            .is_none_or(|b| report.wall_seconds < b.wall_seconds)
        {
            best = Some(report);
        }
    }
    Ok(best.expect("at least one repeat"))
}

fn run_id(label: &str, grid: &GridSpec, workers: u32, repeats: u32) -> String {
    format!(
        "{label}-{}x{}-w{workers}-best{}",
        grid.width,
        grid.height,
        repeats.max(1)
    )
}

/// Fixed problem, varying worker count. Every row must see the same
/// events; a mismatch is reported as an error.
pub fn strong_scaling(
    base: &SimConfig,
    workers: &[u32],
    repeats: u32,
    label: &str,
) -> Result<Vec<MetricRow>, ScalingError> {
    validate_workers(workers)?;
    let mut rows = Vec::with_capacity(workers.len());
    for &w in workers {
        let config = SimConfig {
            workers: w,
            ..base.clone()
        };
        let report = best_of(&config, repeats)?;
        rows.push(MetricRow::from_report(
            run_id(label, &config.grid, w, repeats),
            &config,
            &report,
        ));
    }
    let first = &rows[0];
    if let Some(row) = rows.iter().find(|r| {
        (r.recurrent_events, r.external_events, r.spikes_total)
            != (
                first.recurrent_events,
                first.external_events,
                first.spikes_total,
            )
    }) {
        return Err(ScalingError::Nondeterministic(first.workers, row.workers));
    }
    if let Some(baseline) = rows.iter().find(|r| r.workers == 1).map(|r| r.wall_s) {
        for row in &mut rows {
            row.speedup = Some(if row.workers == 1 {
                1.0
            } else {
                baseline / row.wall_s
            });
        }
    }
    Ok(rows)
}

/// Most-square factorization `(a, b)` of `n` with `a >= b`.
pub fn most_square(n: u32) -> (u32, u32) {
    let b = (1..=n)
        .take_while(|&b| u64::from(b) * u64::from(b) <= u64::from(n))
        .filter(|&b| n.is_multiple_of(b))
        .last()
        .unwrap_or(1);
    (n / b, b)
}

/// Grid for `workers` workers holding `columns_per_worker` columns each:
/// the most-square per-worker block tiled by the most-square worker layout.
pub fn weak_grid(columns_per_worker: u32, workers: u32) -> Result<(u32, u32), ScalingError> {
    if columns_per_worker == 0 || workers == 0 {
        return Err(ScalingError::Config(
            "columns per worker and workers must be at least 1".into(),
        ));
    }
    let (bw, bh) = most_square(columns_per_worker);
    let (nx, ny) = most_square(workers);
    match (bw.checked_mul(nx), bh.checked_mul(ny)) {
        (Some(w), Some(h)) if u64::from(w) * u64::from(h) <= u64::from(u32::MAX) => Ok((w, h)),
        _ => Err(ScalingError::Config(format!(
            "{columns_per_worker} columns on each of {workers} workers overflows the grid"
        ))),
    }
}

/// Fixed load per worker, grid grown with the worker count.
pub fn weak_scaling(
    base: &SimConfig,
    columns_per_worker: u32,
    workers: &[u32],
    repeats: u32,
    label: &str,
) -> Result<Vec<MetricRow>, ScalingError> {
    validate_workers(workers)?;
    let mut rows = Vec::with_capacity(workers.len());
    for &w in workers {
        let (gw, gh) = weak_grid(columns_per_worker, w)?;
        let config = SimConfig {
            grid: GridSpec {
                width: gw,
                height: gh,
                ..base.grid.clone()
            },
            workers: w,
            ..base.clone()
        };
        let report = best_of(&config, repeats)?;
        rows.push(MetricRow::from_report(
            run_id(label, &config.grid, w, repeats),
            &config,
            &report,
        ));
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<(), ScalingError> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    writer.write_record(CSV_HEADER.split(','))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[MetricRow], path: &Path) -> Result<(), ScalingError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_csv(rows, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricRow>, ScalingError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(ScalingError::Config(format!(
            "{}: unexpected header '{}'",
            path.display(),
            header.join(",")
        )));
    }
    reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(Into::into)
}

/// Concatenates the rows of `paths`, in the order given.
pub fn merge_reports(paths: &[impl AsRef<Path>]) -> Result<Vec<MetricRow>, ScalingError> {
    let mut rows = Vec::new();
    for path in paths {
        rows.extend(read_csv(path.as_ref())?);
    }
    Ok(rows)
}

/// Named `(workers, value)` series derived from sweep rows.
pub fn curves(rows: &[MetricRow]) -> Vec<(&'static str, Vec<(u32, f64)>)> {
    let series = |f: fn(&MetricRow) -> Option<f64>| -> Vec<(u32, f64)> {
        rows.iter()
            .filter_map(|r| f(r).map(|v| (r.workers, v)))
            .collect()
    };
    vec![
        ("wall_s", series(|r| Some(r.wall_s))),
        ("speedup", series(|r| r.speedup)),
        ("time_per_event_s", series(|r| r.time_per_event_s)),
        (
            "time_per_event_per_worker_s",
            series(MetricRow::time_per_event_per_worker),
        ),
        ("bytes_per_synapse", series(|r| r.bytes_per_synapse)),
    ]
}

/// Writes one two-column `workers value` file per non-empty curve, named
/// `<stem>.<curve>.dat`, and returns the paths.
pub fn write_curves(rows: &[MetricRow], dir: &Path, stem: &str) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, points) in curves(rows) {
        if points.is_empty() {
            continue;
        }
        let path = dir.join(format!("{stem}.{name}.dat"));
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "# workers\t{name}")?;
        for (x, y) in points {
            writeln!(out, "{x}\t{y}")?;
        }
        out.flush()?;
        written.push(path);
    }
    Ok(written)
}
