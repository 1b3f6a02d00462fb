use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::stats::{ls_slope, median, Summary};
use super::timed::{Op, Sample, TimedBackend};
use super::workload::{generate_stream, WorkloadSpec};
use super::{replay, ReplayOutcome};
use crate::ingest::OrphanPolicy;
use crate::storage::{Backend, BackendId, StoreError};

/// Per-operation storage latencies of one workload replay.
#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    pub backend: BackendId,
    pub spec: WorkloadSpec,
    pub samples: Vec<Sample>,
    pub accepted: u64,
    pub rejected: u64,
}

/// Replays the workload of `spec` into `backend`, timing every storage call.
/// The backend should be empty; rejected envelopes are reported, not fatal.
pub fn run_latency_bench(backend: Arc<dyn Backend>, spec: &WorkloadSpec) -> Result<LatencyReport, StoreError> {
    spec.validate().map_err(StoreError::Invalid)?;
    let stream = generate_stream(spec);
    let timed = TimedBackend::new(backend.clone());
    let ReplayOutcome { accepted, rejected, .. } = replay(&stream, &timed, OrphanPolicy::Reject)?;
    Ok(LatencyReport {
        backend: backend.id(),
        spec: spec.clone(),
        samples: timed.take_samples(),
        accepted,
        rejected,
    })
}

impl LatencyReport {
    /// `(run_index, latency_us)` pairs of one operation, in call order.
    pub fn series(&self, op: Op) -> Vec<(u64, f64)> {
        self.samples
            .iter()
            .filter(|s| s.op == op)
            .map(|s| (s.run_index, s.latency_us))
            .collect()
    }

    pub fn summary(&self, op: Op) -> Option<Summary> {
        let v: Vec<f64> = self.series(op).into_iter().map(|(_, l)| l).collect();
        Summary::of(&v)
    }

    /// Least-squares slope of SOR latency (µs) against run index.
    pub fn sor_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self.series(Op::Sor).into_iter().map(|(i, l)| (i as f64, l)).collect();
        ls_slope(&pts)
    }

    /// Median latency of `op` over runs with index in `[from, to)`.
    pub fn median_in(&self, op: Op, from: u64, to: u64) -> f64 {
        let v: Vec<f64> = self
            .series(op)
            .into_iter()
            .filter(|(i, _)| (from..to).contains(i))
            .map(|(_, l)| l)
            .collect();
        median(&v)
    }

    /// Median latency of `op` per consecutive window of `window` runs, as
    /// `(first run index, median)`.
    pub fn window_medians(&self, op: Op, window: u64) -> Vec<(u64, f64)> {
        let runs = self.samples.iter().map(|s| s.run_index + 1).max().unwrap_or(0);
        (0..runs)
            .step_by(window.max(1) as usize)
            .map(|start| (start, self.median_in(op, start, start + window)))
            .filter(|(_, m)| !m.is_nan())
            .collect()
    }

    /// Series CSV: `op,run_index,latency_us`.
    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["op", "run_index", "latency_us"])?;
        for s in &self.samples {
            w.write_record([s.op.as_str(), &s.run_index.to_string(), &format!("{:.3}", s.latency_us)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Summary CSV: `op,count,min_us,max_us,mean_us,median_us,p95_us`,
    /// followed by one `SOR_slope_us_per_run` row whose value sits in the
    /// `mean_us` column.
    pub fn write_summary_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["op", "count", "min_us", "max_us", "mean_us", "median_us", "p95_us"])?;
        for op in Op::ALL {
            if let Some(s) = self.summary(op) {
                w.write_record([
                    op.as_str().to_owned(),
                    s.count.to_string(),
                    format!("{:.3}", s.min),
                    format!("{:.3}", s.max),
                    format!("{:.3}", s.mean),
                    format!("{:.3}", s.median),
                    format!("{:.3}", s.p95),
                ])?;
            }
        }
        w.write_record(["SOR_slope_us_per_run", "", "", "", &format!("{:.6}", self.sor_slope()), "", ""])?;
        w.flush()?;
        Ok(())
    }

    /// Gnuplot data: one block per operation (`run_index latency_us`),
    /// blocks separated by two blank lines so `index N` selects one.
    pub fn write_dat(&self, mut out: impl Write) -> std::io::Result<()> {
        for op in Op::ALL {
            writeln!(out, "# {op} ({})", self.backend.short_name())?;
            for (i, l) in self.series(op) {
                writeln!(out, "{i} {l:.3}")?;
            }
            writeln!(out, "\n")?;
        }
        Ok(())
    }

    /// Writes `<prefix>.csv`, `<prefix>_summary.csv` and `<prefix>.dat`
    /// into `dir`.
    pub fn write_files(&self, dir: &Path, prefix: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let file = |suffix: &str| std::fs::File::create(dir.join(format!("{prefix}{suffix}")));
        self.write_csv(file(".csv")?).map_err(std::io::Error::other)?;
        self.write_summary_csv(file("_summary.csv")?).map_err(std::io::Error::other)?;
        self.write_dat(std::io::BufWriter::new(file(".dat")?))
    }
}
