//! Naive reference state machine for the run lifecycle and an exhaustive
//! driver comparing it with `handle_envelope` over every kind sequence.

use std::collections::BTreeMap;

use obk_core::ingest::{handle_envelope, OrphanPolicy, PartitionState, StoreEffect};
use obk_core::model::{
    Attachment, Attribute, ClosedStatus, CommentOrigin, CommentPayload, DetectorMask, EorPayload, IsInfo,
    MessageEnvelope, MrsMessage, NewComment, Payload, RunStatus, Scalar, Severity, SorPayload,
    Timestamp, TriggerType,
};
use obk_core::storage::{Backend, MemoryStore};

pub const PARTITION: &str = "TB";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum K {
    Sor,
    Eor,
    Mrs,
    Is,
    Comment,
}

pub const KINDS: [K; 5] = [K::Sor, K::Eor, K::Mrs, K::Is, K::Comment];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefRun {
    pub status: RunStatus,
    pub num_events: u64,
    pub start_ms: i64,
    pub end_ms: Option<i64>,
    pub records: u64,
    pub comments: u64,
}

/// What the reference expects of one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefOutcome {
    Started(u64),
    Ended(u64),
    Record(u64, u64),
    Comment(u64, u64),
    Orphan(u64),
    Err(&'static str),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RefState {
    pub runs: BTreeMap<u64, RefRun>,
    pub open: Option<u64>,
    pub orphans: u64,
    pub sors: u64,
    pub eors: u64,
    pub seq: u64,
}

fn ms(seq: u64) -> i64 {
    1_030_000_000_000 + seq as i64 * 10
}

impl RefState {
    /// Run number carried by the next SOR: SORs come in pairs sharing a
    /// number, so every second one is a duplicate unless the first failed.
    fn next_run_number(&self) -> u64 {
        self.sors / 2 + 1
    }

    fn next_status(&self) -> ClosedStatus {
        if self.eors.is_multiple_of(2) { ClosedStatus::Good } else { ClosedStatus::Bad }
    }

    pub fn step(&mut self, k: K, policy: OrphanPolicy) -> RefOutcome {
        self.seq += 1;
        let t = ms(self.seq);
        match k {
            K::Sor => {
                let n = self.next_run_number();
                self.sors += 1;
                if self.runs.contains_key(&n) {
                    return RefOutcome::Err("DUPLICATE_RUN");
                }
                if self.open.is_some() {
                    return RefOutcome::Err("ALREADY_OPEN");
                }
                self.runs.insert(
                    n,
                    RefRun {
                        status: RunStatus::Open,
                        num_events: 0,
                        start_ms: t,
                        end_ms: None,
                        records: 0,
                        comments: 0,
                    },
                );
                self.open = Some(n);
                RefOutcome::Started(n)
            }
            K::Eor => {
                let status = self.next_status();
                let events = self.eors * 10;
                self.eors += 1;
                let Some(n) = self.open.take() else {
                    return RefOutcome::Err("NO_OPEN_RUN");
                };
                let run = self.runs.get_mut(&n).unwrap();
                run.status = status.into();
                run.num_events = events;
                run.end_ms = Some(t);
                RefOutcome::Ended(n)
            }
            K::Mrs | K::Is | K::Comment => match self.open {
                Some(n) => {
                    let run = self.runs.get_mut(&n).unwrap();
                    if k == K::Comment {
                        run.comments += 1;
                        RefOutcome::Comment(n, run.comments)
                    } else {
                        run.records += 1;
                        RefOutcome::Record(n, run.records)
                    }
                }
                None if policy == OrphanPolicy::Store => {
                    self.orphans += 1;
                    RefOutcome::Orphan(self.orphans)
                }
                None => RefOutcome::Err("NO_OPEN_RUN"),
            },
        }
    }

    /// The envelope the reference assumes for the next step of kind `k`.
    pub fn envelope(&self, k: K) -> MessageEnvelope {
        let seq = self.seq + 1;
        let ts = Timestamp::from_millis(ms(seq)).unwrap();
        let payload = match k {
            K::Sor => Payload::Sor(SorPayload {
                run_number: self.next_run_number(),
                max_events: 1000,
                trigger_type: TriggerType::Physics,
                beam_type: "Muons".into(),
                detector_mask: DetectorMask(0b1011),
            }),
            K::Eor => Payload::Eor(EorPayload {
                status: self.next_status(),
                num_events: self.eors * 10,
            }),
            K::Mrs => Payload::Mrs(MrsMessage {
                message_name: "RC::Transition".into(),
                severity: Severity::Information,
                application: "RunControl".into(),
                text: format!("step {seq}"),
                timestamp: ts,
                qualifiers: vec![],
            }),
            K::Is => Payload::Is(IsInfo {
                server: "DF".into(),
                object_name: "DFStats.obj".into(),
                class_name: "DFStats".into(),
                attributes: vec![Attribute::new("rate", Scalar::Int(seq as i64))],
                timestamp: ts,
            }),
            K::Comment => {
                let data = format!("attachment {seq}").into_bytes();
                let c = NewComment {
                    author: "shifter".into(),
                    created_at: ts,
                    text: format!("comment {seq}"),
                    origin: CommentOrigin::Online,
                    attachments: vec![Attachment::describe("note.txt", "text/plain", &data)],
                };
                Payload::Comment(CommentPayload::from_parts(&c, &[data]))
            }
        };
        MessageEnvelope {
            partition: PARTITION.into(),
            seq,
            timestamp: ts,
            payload,
        }
    }
}

fn outcome_of(r: Result<StoreEffect, obk_core::ingest::IngestError>) -> RefOutcome {
    match r {
        Ok(StoreEffect::RunStarted { run_number }) => RefOutcome::Started(run_number),
        Ok(StoreEffect::RunEnded { header }) => RefOutcome::Ended(header.run_number),
        Ok(StoreEffect::RecordAppended { run_number, record_id }) => RefOutcome::Record(run_number, record_id),
        Ok(StoreEffect::CommentAdded { run_number, comment_id }) => RefOutcome::Comment(run_number, comment_id),
        Ok(StoreEffect::OrphanStored { orphan_id }) => RefOutcome::Orphan(orphan_id),
        Err(e) => RefOutcome::Err(e.code()),
    }
}

/// Describes the first difference between the store and the reference.
pub fn compare_state(store: &dyn Backend, state: &PartitionState, r: &RefState) -> Result<(), String> {
    if state.open_run != r.open {
        return Err(format!("open run {:?} != reference {:?}", state.open_run, r.open));
    }
    if store.open_run(PARTITION).map_err(|e| e.to_string())? != r.open {
        return Err("store open run disagrees with reference".into());
    }
    let headers = store.list_run_headers(Some(PARTITION)).map_err(|e| e.to_string())?;
    let open = headers.iter().filter(|h| h.status == RunStatus::Open).count();
    if open > 1 {
        return Err(format!("{open} open runs"));
    }
    if headers.len() != r.runs.len() {
        return Err(format!("{} runs != reference {}", headers.len(), r.runs.len()));
    }
    for h in &headers {
        let Some(want) = r.runs.get(&h.run_number) else {
            return Err(format!("unexpected run {}", h.run_number));
        };
        let d = store.get_run_detail(PARTITION, h.run_number).map_err(|e| e.to_string())?;
        let got = RefRun {
            status: h.status,
            num_events: h.num_events,
            start_ms: h.start_time.as_millis(),
            end_ms: h.end_time.map(|t| t.as_millis()),
            records: (d.mrs.len() + d.is.len()) as u64,
            comments: d.comments.len() as u64,
        };
        if &got != want {
            return Err(format!("run {}: {got:?} != reference {want:?}", h.run_number));
        }
    }
    let orphans = store.orphans(PARTITION).map(|o| o.len() as u64).unwrap_or(0);
    if orphans != r.orphans {
        return Err(format!("{orphans} orphans != reference {}", r.orphans));
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct Exhaustive {
    /// Sequences checked, counting every length from 1 to the maximum.
    pub sequences: u64,
    pub full_length: u64,
    pub mismatches: Vec<String>,
}

/// Checks every kind sequence of length `1..=max_len` under `policy`,
/// sharing prefixes through store snapshots.
pub fn check_all(max_len: usize, policy: OrphanPolicy) -> Exhaustive {
    let mut out = Exhaustive::default();
    let mut path = Vec::new();
    dfs(&MemoryStore::new(), &PartitionState::new(PARTITION), &RefState::default(), max_len, policy, &mut path, &mut out);
    out
}

fn dfs(
    store: &MemoryStore,
    state: &PartitionState,
    r: &RefState,
    remaining: usize,
    policy: OrphanPolicy,
    path: &mut Vec<K>,
    out: &mut Exhaustive,
) {
    if remaining == 0 {
        return;
    }
    for k in KINDS {
        let store = store.snapshot();
        let mut state = state.clone();
        let mut r = r.clone();
        let env = r.envelope(k);
        let got = outcome_of(handle_envelope(&mut state, 1, &env, &store, policy));
        let want = r.step(k, policy);
        path.push(k);
        out.sequences += 1;
        if remaining == 1 {
            out.full_length += 1;
        }
        let verdict = if got != want {
            Err(format!("step outcome {got:?} != reference {want:?}"))
        } else {
            compare_state(&store, &state, &r)
        };
        match verdict {
            Ok(()) => dfs(&store, &state, &r, remaining - 1, policy, path, out),
            Err(e) => {
                if out.mismatches.len() < 20 {
                    out.mismatches.push(format!("{policy:?} {path:?}: {e}"));
                }
            }
        }
        path.pop();
    }
}
