use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::latency::{run_latency_bench, LatencyReport};
use super::timed::Op;
use super::workload::WorkloadSpec;
use crate::storage::{create_repository, export_canonical_string, Backend, BackendId, OpenOptions, Repository, StoreError};

/// Latency reports of both persistent backends on the same workload.
#[derive(Debug, Clone, Serialize)]
pub struct BackendComparison {
    pub file: LatencyReport,
    pub relational: LatencyReport,
    /// Canonical exports of the two repositories are byte-identical.
    pub exports_equal: bool,
}

/// Replays `spec` into a fresh FileStore (`<work_dir>/file`) and a fresh
/// RelationalStore (`<work_dir>/relational.sqlite`) and compares them.
pub fn compare_backends(spec: &WorkloadSpec, work_dir: &Path) -> Result<BackendComparison, StoreError> {
    std::fs::create_dir_all(work_dir)?;
    let mut reports = Vec::new();
    let mut exports = Vec::new();
    for (backend, name) in [(BackendId::FileStore, "file"), (BackendId::RelationalStore, "relational.sqlite")] {
        let root = work_dir.join(name);
        create_repository(backend, &root)?;
        let store: Arc<dyn Backend> = Repository::open(&root, OpenOptions::default())?.into_backend().into();
        reports.push(run_latency_bench(store.clone(), spec)?);
        exports.push(export_canonical_string(store.as_ref())?);
    }
    let relational = reports.pop().expect("two reports");
    let file = reports.pop().expect("two reports");
    Ok(BackendComparison {
        file,
        relational,
        exports_equal: exports[0] == exports[1],
    })
}

impl BackendComparison {
    /// Side-by-side table of the per-operation summaries, in milliseconds.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>12} {:>12} {:>12} {:>12}\n",
            "op", "file_mean", "file_median", "rel_mean", "rel_median"
        );
        for op in Op::ALL {
            let (Some(f), Some(r)) = (self.file.summary(op), self.relational.summary(op)) else { continue };
            out.push_str(&format!(
                "{:<8} {:>12.4} {:>12.4} {:>12.4} {:>12.4}\n",
                op.as_str(),
                f.mean / 1e3,
                f.median / 1e3,
                r.mean / 1e3,
                r.median / 1e3
            ));
        }
        out.push_str(&format!(
            "SOR slope (us/run): file {:.4}, relational {:.4}\nexports equal: {}\n",
            self.file.sor_slope(),
            self.relational.sor_slope(),
            self.exports_equal
        ));
        out
    }
}
