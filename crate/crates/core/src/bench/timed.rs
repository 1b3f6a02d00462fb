use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::{
    Attachment, ClosedStatus, IsInfo, MrsMessage, NewComment, RunHeader, SearchCriteria, Timestamp,
    User,
};
use crate::query::{IsMatch, IsQuery};
use crate::storage::{Backend, BackendId, OrphanPayload, OrphanRecord, Result, RunDetail};

/// Storage operations whose latency the benchmarks record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "SOR")]
    Sor,
    #[serde(rename = "EOR")]
    Eor,
    #[serde(rename = "Comment")]
    Comment,
    #[serde(rename = "IS")]
    Is,
    #[serde(rename = "MRS")]
    Mrs,
}

impl Op {
    pub const ALL: [Op; 5] = [Op::Sor, Op::Eor, Op::Comment, Op::Is, Op::Mrs];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Sor => "SOR",
            Op::Eor => "EOR",
            Op::Comment => "Comment",
            Op::Is => "IS",
            Op::Mrs => "MRS",
        }
    }
}

impl std::fmt::Display for Op {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One timed storage call. `run_index` is the 0-based index of the run
/// (in start order) the call belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub op: Op,
    pub run_index: u64,
    pub latency_us: f64,
}

/// Backend decorator recording the wall time of every successful write.
pub struct TimedBackend {
    inner: Arc<dyn Backend>,
    samples: Mutex<Vec<Sample>>,
    runs_started: AtomicU64,
}

impl TimedBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        TimedBackend {
            inner,
            samples: Mutex::new(Vec::new()),
            runs_started: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &Arc<dyn Backend> {
        &self.inner
    }

    pub fn take_samples(&self) -> Vec<Sample> {
        std::mem::take(&mut *self.samples.lock().unwrap_or_else(|p| p.into_inner()))
    }

    fn current_run(&self) -> u64 {
        self.runs_started.load(Ordering::SeqCst).saturating_sub(1)
    }

    fn time<T>(&self, op: Op, run_index: u64, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        let latency_us = start.elapsed().as_secs_f64() * 1e6;
        if out.is_ok() {
            self.samples
                .lock()
                .unwrap_or_else(|p| p.into_inner())
                .push(Sample { op, run_index, latency_us });
        }
        out
    }
}

impl Backend for TimedBackend {
    fn id(&self) -> BackendId {
        self.inner.id()
    }

    fn root(&self) -> &Path {
        self.inner.root()
    }

    fn writable(&self) -> bool {
        self.inner.writable()
    }

    fn begin_run(&self, header: &RunHeader) -> Result<()> {
        let index = self.runs_started.load(Ordering::SeqCst);
        self.time(Op::Sor, index, || self.inner.begin_run(header))?;
        self.runs_started.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    fn end_run(
        &self,
        partition: &str,
        run_number: u64,
        status: ClosedStatus,
        num_events: u64,
        end_time: Timestamp,
    ) -> Result<RunHeader> {
        self.time(Op::Eor, self.current_run(), || {
            self.inner.end_run(partition, run_number, status, num_events, end_time)
        })
    }

    fn append_mrs(&self, partition: &str, run_number: u64, message: &MrsMessage) -> Result<u64> {
        self.time(Op::Mrs, self.current_run(), || self.inner.append_mrs(partition, run_number, message))
    }

    fn append_is(&self, partition: &str, run_number: u64, info: &IsInfo) -> Result<u64> {
        self.time(Op::Is, self.current_run(), || self.inner.append_is(partition, run_number, info))
    }

    fn append_comment(
        &self,
        partition: &str,
        run_number: u64,
        comment: &NewComment,
        blobs: &[Vec<u8>],
    ) -> Result<u64> {
        self.time(Op::Comment, self.current_run(), || {
            self.inner.append_comment(partition, run_number, comment, blobs)
        })
    }

    fn append_orphan(&self, partition: &str, payload: &OrphanPayload, blobs: &[Vec<u8>]) -> Result<u64> {
        self.inner.append_orphan(partition, payload, blobs)
    }

    fn force_close(&self, partition: &str, run_number: u64) -> Result<RunHeader> {
        self.inner.force_close(partition, run_number)
    }

    fn open_run(&self, partition: &str) -> Result<Option<u64>> {
        self.inner.open_run(partition)
    }

    fn partitions(&self) -> Result<Vec<String>> {
        self.inner.partitions()
    }

    fn list_run_headers(&self, partition: Option<&str>) -> Result<Vec<RunHeader>> {
        self.inner.list_run_headers(partition)
    }

    fn get_run_detail(&self, partition: &str, run_number: u64) -> Result<RunDetail> {
        self.inner.get_run_detail(partition, run_number)
    }

    fn orphans(&self, partition: &str) -> Result<Vec<OrphanRecord>> {
        self.inner.orphans(partition)
    }

    fn get_attachment(&self, digest: &str) -> Result<(Attachment, Vec<u8>)> {
        self.inner.get_attachment(digest)
    }

    fn blob_digests(&self) -> Result<Vec<String>> {
        self.inner.blob_digests()
    }

    fn put_user(&self, user: &User) -> Result<()> {
        self.inner.put_user(user)
    }

    fn get_user(&self, username: &str) -> Result<Option<User>> {
        self.inner.get_user(username)
    }

    fn list_users(&self) -> Result<Vec<User>> {
        self.inner.list_users()
    }

    fn find_runs(&self, criteria: &SearchCriteria, include_open: bool) -> Result<Vec<RunHeader>> {
        self.inner.find_runs(criteria, include_open)
    }

    fn find_is_instances(&self, query: &IsQuery) -> Result<Vec<IsMatch>> {
        self.inner.find_is_instances(query)
    }
}
