//! Acquisition side: envelope parsing, subscription filtering and the
//! per-partition run lifecycle that routes envelopes into storage.

mod filter;
mod parse;
mod server;

use std::collections::HashMap;

use crate::model::{MessageEnvelope, Payload, RunHeader};
use crate::storage::{Backend, OrphanPayload, StoreError};

pub use filter::{filter_accepts, FilterError, PartitionSet, SubscriptionFilter};
pub use parse::{parse_envelope, ParseError};
pub use server::{AcquisitionConfig, AcquisitionServer, ServerHandle, ServerStats};

/// Identifies one publisher connection.
pub type ConnectionId = u64;

/// What to do with MRS/IS/COMMENT data arriving while no run is open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum OrphanPolicy {
    #[default]
    Reject,
    Store,
}

impl std::str::FromStr for OrphanPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reject" => Ok(OrphanPolicy::Reject),
            "store" | "orphan-store" => Ok(OrphanPolicy::Store),
            other => Err(format!("unknown orphan policy {other:?} (expected reject or store)")),
        }
    }
}

/// Lifecycle state of one partition as seen by the acquisition server.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartitionState {
    pub partition: String,
    pub open_run: Option<u64>,
    pub last_seq_by_connection: HashMap<ConnectionId, u64>,
}

impl PartitionState {
    pub fn new(partition: impl Into<String>) -> Self {
        PartitionState {
            partition: partition.into(),
            ..Default::default()
        }
    }

    /// State for a partition of an existing repository, picking up a run
    /// left open by a previous server.
    pub fn load(partition: &str, store: &dyn Backend) -> Result<Self, StoreError> {
        Ok(PartitionState {
            partition: partition.to_owned(),
            open_run: store.open_run(partition)?,
            last_seq_by_connection: HashMap::new(),
        })
    }
}

/// The storage change caused by one accepted envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum StoreEffect {
    RunStarted { run_number: u64 },
    RunEnded { header: RunHeader },
    RecordAppended { run_number: u64, record_id: u64 },
    CommentAdded { run_number: u64, comment_id: u64 },
    OrphanStored { orphan_id: u64 },
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("run {partition}/{run_number} already exists")]
    DuplicateRun { partition: String, run_number: u64 },
    #[error("no open run in partition {0}")]
    NoOpenRun(String),
    #[error("partition {partition} already has open run {open_run}")]
    AlreadyOpen { partition: String, open_run: u64 },
    #[error("sequence number {seq} does not follow {last}")]
    SeqRegression { seq: u64, last: u64 },
    #[error("envelope partition {envelope} does not match state partition {state}")]
    WrongPartition { envelope: String, state: String },
    #[error("invalid comment attachment content: {0}")]
    BadAttachment(String),
    #[error(transparent)]
    Store(StoreError),
}

impl IngestError {
    /// Upper-case code sent in `err` replies.
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::DuplicateRun { .. } => "DUPLICATE_RUN",
            IngestError::NoOpenRun(_) => "NO_OPEN_RUN",
            IngestError::AlreadyOpen { .. } => "ALREADY_OPEN",
            IngestError::SeqRegression { .. } => "SEQ_REGRESSION",
            IngestError::WrongPartition { .. } => "WRONG_PARTITION",
            IngestError::BadAttachment(_) => "PAYLOAD_SCHEMA",
            IngestError::Store(e) => e.code(),
        }
    }
}

impl From<StoreError> for IngestError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::DuplicateRun {
                partition,
                run_number,
            } => IngestError::DuplicateRun {
                partition,
                run_number,
            },
            StoreError::AlreadyOpen {
                partition,
                open_run,
            } => IngestError::AlreadyOpen {
                partition,
                open_run,
            },
            other => IngestError::Store(other),
        }
    }
}

/// Applies one envelope to a partition.
///
/// * SOR creates an open run starting at the envelope timestamp.
/// * EOR closes the open run with the envelope timestamp as end time.
/// * MRS, IS and COMMENT are appended to the open run; with no open run they
///   are rejected or kept as orphans depending on `policy`.
///
/// A sequence number not above the connection's previous one is rejected
/// before anything else; otherwise it is recorded even if the envelope
/// itself is then refused.
pub fn handle_envelope(
    state: &mut PartitionState,
    conn: ConnectionId,
    env: &MessageEnvelope,
    store: &dyn Backend,
    policy: OrphanPolicy,
) -> Result<StoreEffect, IngestError> {
    if env.partition != state.partition {
        return Err(IngestError::WrongPartition {
            envelope: env.partition.clone(),
            state: state.partition.clone(),
        });
    }
    if let Some(&last) = state.last_seq_by_connection.get(&conn) {
        if env.seq <= last {
            return Err(IngestError::SeqRegression { seq: env.seq, last });
        }
    }
    state.last_seq_by_connection.insert(conn, env.seq);

    let partition = env.partition.as_str();
    match &env.payload {
        Payload::Sor(sor) => {
            let header = RunHeader::open(
                partition,
                sor.run_number,
                env.timestamp,
                sor.max_events,
                sor.trigger_type.clone(),
                sor.beam_type.clone(),
                sor.detector_mask,
            );
            match store.begin_run(&header) {
                Ok(()) => {
                    state.open_run = Some(sor.run_number);
                    Ok(StoreEffect::RunStarted {
                        run_number: sor.run_number,
                    })
                }
                Err(StoreError::AlreadyOpen { partition, open_run }) => {
                    // Another writer opened a run behind our back.
                    state.open_run = Some(open_run);
                    Err(IngestError::AlreadyOpen { partition, open_run })
                }
                Err(e) => Err(e.into()),
            }
        }
        Payload::Eor(eor) => {
            let close = |run| store.end_run(partition, run, eor.status, eor.num_events, env.timestamp);
            let result = match state.open_run {
                Some(run) => match close(run) {
                    Err(StoreError::NotOpen { .. } | StoreError::UnknownRun { .. }) => None,
                    other => Some(other),
                },
                None => None,
            };
            let header = match result {
                Some(r) => r?,
                None => {
                    // Cached state is stale (e.g. the run was force-closed).
                    state.open_run = store.open_run(partition)?;
                    let run = state.open_run.ok_or_else(|| IngestError::NoOpenRun(partition.into()))?;
                    close(run)?
                }
            };
            state.open_run = None;
            Ok(StoreEffect::RunEnded { header })
        }
        Payload::Mrs(m) => route_data(state, store, policy, OrphanPayload::Mrs(m.clone()), Vec::new()),
        Payload::Is(i) => route_data(state, store, policy, OrphanPayload::Is(i.clone()), Vec::new()),
        Payload::Comment(c) => {
            let (comment, blobs) = c
                .clone()
                .into_parts()
                .map_err(|e| IngestError::BadAttachment(e.to_string()))?;
            route_data(state, store, policy, OrphanPayload::Comment(comment), blobs)
        }
    }
}

fn append(store: &dyn Backend, partition: &str, run: u64, data: &OrphanPayload, blobs: &[Vec<u8>]) -> Result<StoreEffect, StoreError> {
    Ok(match data {
        OrphanPayload::Mrs(m) => StoreEffect::RecordAppended {
            run_number: run,
            record_id: store.append_mrs(partition, run, m)?,
        },
        OrphanPayload::Is(i) => StoreEffect::RecordAppended {
            run_number: run,
            record_id: store.append_is(partition, run, i)?,
        },
        OrphanPayload::Comment(c) => StoreEffect::CommentAdded {
            run_number: run,
            comment_id: store.append_comment(partition, run, c, blobs)?,
        },
    })
}

fn route_data(
    state: &mut PartitionState,
    store: &dyn Backend,
    policy: OrphanPolicy,
    data: OrphanPayload,
    blobs: Vec<Vec<u8>>,
) -> Result<StoreEffect, IngestError> {
    let partition = state.partition.clone();
    if let Some(run) = state.open_run {
        match append(store, &partition, run, &data, &blobs) {
            Err(StoreError::RunClosed { .. } | StoreError::UnknownRun { .. }) => {
                state.open_run = store.open_run(&partition)?;
            }
            other => return Ok(other?),
        }
        if let Some(run) = state.open_run {
            return Ok(append(store, &partition, run, &data, &blobs)?);
        }
    }
    match policy {
        OrphanPolicy::Reject => Err(IngestError::NoOpenRun(partition)),
        OrphanPolicy::Store => Ok(StoreEffect::OrphanStored {
            orphan_id: store.append_orphan(&partition, &data, &blobs)?,
        }),
    }
}
