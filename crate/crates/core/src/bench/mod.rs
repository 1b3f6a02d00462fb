//! Benchmark harness: a deterministic publisher simulator, per-operation
//! storage latency measurement, the publisher scalability sweep and a
//! backend comparison.
//!
//! CSV schemas (column order is fixed):
//!
//! * latency series: `op,run_index,latency_us`
//! * latency summary: `op,count,min_us,max_us,mean_us,median_us,p95_us`
//! * scalability: `publishers,sent,acknowledged,persisted,mean_us,p95_us,mean_rtt_us,p95_rtt_us`

mod compare;
mod latency;
mod scale;
mod stats;
mod timed;
mod workload;

use std::collections::HashMap;

use crate::ingest::{handle_envelope, IngestError, OrphanPolicy, PartitionState};
use crate::storage::{Backend, Result as StoreResult, StoreError};

pub use compare::{compare_backends, BackendComparison};
pub use latency::{run_latency_bench, LatencyReport};
pub use scale::{persisted_count, run_scalability_bench, ScalabilityOptions, ScalabilityPoint, ScalabilityReport};
pub use stats::{ls_slope, mean, median, percentile, Summary};
pub use timed::{Op, Sample, TimedBackend};
pub use workload::{generate_stream, Stream, WorkloadSpec};

/// Result of feeding a stream through the ingest lifecycle in-process.
#[derive(Debug, Default)]
pub struct ReplayOutcome {
    pub accepted: u64,
    pub rejected: u64,
    /// Up to the first ten rejections, as `(seq, code)`.
    pub errors: Vec<(u64, &'static str)>,
}

/// Replays `stream` into `store`, publisher by publisher, each publisher
/// acting as its own connection.
pub fn replay(stream: &Stream, store: &dyn Backend, policy: OrphanPolicy) -> StoreResult<ReplayOutcome> {
    let mut states: HashMap<String, PartitionState> = HashMap::new();
    let mut out = ReplayOutcome::default();
    for (conn, envelopes) in stream.publishers.iter().enumerate() {
        for env in envelopes {
            let state = match states.get_mut(&env.partition) {
                Some(s) => s,
                None => states
                    .entry(env.partition.clone())
                    .or_insert(PartitionState::load(&env.partition, store)?),
            };
            match handle_envelope(state, conn as u64 + 1, env, store, policy) {
                Ok(_) => out.accepted += 1,
                Err(IngestError::Store(e @ StoreError::Io(_))) => return Err(e),
                Err(e) => {
                    out.rejected += 1;
                    if out.errors.len() < 10 {
                        out.errors.push((env.seq, e.code()));
                    }
                }
            }
        }
    }
    Ok(out)
}
