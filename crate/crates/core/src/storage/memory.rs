use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{
    check_is, check_new_header, check_partition, close_header, last_activity, verify_blobs,
    Backend, BackendId, OrphanPayload, OrphanRecord, Result, RunDetail, StoreError, StoredIs,
    StoredMrs,
};
use crate::model::{
    Attachment, ClosedStatus, IsInfo, MrsMessage, NewComment, RunHeader, RunStatus, Timestamp,
    User,
};

/// Volatile backend keeping everything in process memory. Used where
/// persistence is irrelevant, e.g. exhaustive lifecycle checks.
pub struct MemoryStore {
    root: PathBuf,
    state: Mutex<State>,
}

#[derive(Clone, Default)]
struct State {
    partitions: BTreeSet<String>,
    runs: BTreeMap<(String, u64), Run>,
    orphans: BTreeMap<String, Vec<OrphanRecord>>,
    blobs: BTreeMap<String, (Attachment, Vec<u8>)>,
    users: BTreeMap<String, User>,
}

#[derive(Clone)]
struct Run {
    detail: RunDetail,
    next_record_id: u64,
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore {
            root: PathBuf::from(":memory:"),
            state: Mutex::new(State::default()),
        }
    }

    /// Independent copy of the current contents.
    pub fn snapshot(&self) -> MemoryStore {
        MemoryStore {
            root: self.root.clone(),
            state: Mutex::new(self.lock().clone()),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

fn unknown(partition: &str, run_number: u64) -> StoreError {
    StoreError::UnknownRun {
        partition: partition.to_owned(),
        run_number,
    }
}

impl State {
    fn open_run_mut(&mut self, partition: &str, run_number: u64) -> Result<&mut Run> {
        let run = self
            .runs
            .get_mut(&(partition.to_owned(), run_number))
            .ok_or_else(|| unknown(partition, run_number))?;
        if run.detail.header.status != RunStatus::Open {
            return Err(StoreError::RunClosed {
                partition: partition.to_owned(),
                run_number,
            });
        }
        Ok(run)
    }

    fn store_blobs(&mut self, comment: &NewComment, blobs: &[Vec<u8>]) {
        for (a, data) in comment.attachments.iter().zip(blobs) {
            self.blobs
                .entry(a.digest.clone())
                .or_insert_with(|| (a.clone(), data.clone()));
        }
    }
}

impl Backend for MemoryStore {
    fn id(&self) -> BackendId {
        BackendId::Memory
    }

    fn root(&self) -> &Path {
        &self.root
    }

    fn writable(&self) -> bool {
        true
    }

    fn begin_run(&self, header: &RunHeader) -> Result<()> {
        check_new_header(header)?;
        let mut st = self.lock();
        let key = (header.partition.clone(), header.run_number);
        if st.runs.contains_key(&key) {
            return Err(StoreError::DuplicateRun {
                partition: header.partition.clone(),
                run_number: header.run_number,
            });
        }
        if let Some(((_, open), _)) = st
            .runs
            .range((header.partition.clone(), 0)..=(header.partition.clone(), u64::MAX))
            .find(|(_, r)| r.detail.header.status == RunStatus::Open)
        {
            return Err(StoreError::AlreadyOpen {
                partition: header.partition.clone(),
                open_run: *open,
            });
        }
        st.partitions.insert(header.partition.clone());
        st.runs.insert(
            key,
            Run {
                detail: RunDetail {
                    header: header.clone(),
                    mrs: Vec::new(),
                    is: Vec::new(),
                    comments: Vec::new(),
                },
                next_record_id: 1,
            },
        );
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
        let mut st = self.lock();
        let run = st
            .runs
            .get_mut(&(partition.to_owned(), run_number))
            .ok_or_else(|| unknown(partition, run_number))?;
        let closed = close_header(run.detail.header.clone(), status, num_events, end_time)?;
        run.detail.header = closed.clone();
        Ok(closed)
    }

    fn append_mrs(&self, partition: &str, run_number: u64, message: &MrsMessage) -> Result<u64> {
        let mut st = self.lock();
        let run = st.open_run_mut(partition, run_number)?;
        let id = run.next_record_id;
        run.next_record_id += 1;
        run.detail.mrs.push(StoredMrs {
            record_id: id,
            message: message.clone(),
        });
        Ok(id)
    }

    fn append_is(&self, partition: &str, run_number: u64, info: &IsInfo) -> Result<u64> {
        check_is(info)?;
        let mut st = self.lock();
        let run = st.open_run_mut(partition, run_number)?;
        let id = run.next_record_id;
        run.next_record_id += 1;
        run.detail.is.push(StoredIs {
            record_id: id,
            info: info.clone(),
        });
        Ok(id)
    }

    fn append_comment(
        &self,
        partition: &str,
        run_number: u64,
        comment: &NewComment,
        blobs: &[Vec<u8>],
    ) -> Result<u64> {
        verify_blobs(comment, blobs)?;
        let mut st = self.lock();
        let run = st
            .runs
            .get_mut(&(partition.to_owned(), run_number))
            .ok_or_else(|| unknown(partition, run_number))?;
        let id = run.detail.comments.len() as u64 + 1;
        run.detail.comments.push(comment.clone().with_id(id));
        st.store_blobs(comment, blobs);
        Ok(id)
    }

    fn append_orphan(&self, partition: &str, payload: &OrphanPayload, blobs: &[Vec<u8>]) -> Result<u64> {
        check_partition(partition)?;
        match payload {
            OrphanPayload::Comment(c) => verify_blobs(c, blobs)?,
            OrphanPayload::Is(info) => check_is(info)?,
            OrphanPayload::Mrs(_) => {}
        }
        let mut st = self.lock();
        st.partitions.insert(partition.to_owned());
        if let OrphanPayload::Comment(c) = payload {
            st.store_blobs(c, blobs);
        }
        let list = st.orphans.entry(partition.to_owned()).or_default();
        let id = list.len() as u64 + 1;
        list.push(OrphanRecord {
            orphan_id: id,
            payload: payload.clone(),
        });
        Ok(id)
    }

    fn force_close(&self, partition: &str, run_number: u64) -> Result<RunHeader> {
        let mut st = self.lock();
        let run = st
            .runs
            .get_mut(&(partition.to_owned(), run_number))
            .ok_or_else(|| unknown(partition, run_number))?;
        let end = last_activity(&run.detail);
        let num_events = run.detail.header.num_events;
        let closed = close_header(run.detail.header.clone(), ClosedStatus::Bad, num_events, end)?;
        run.detail.header = closed.clone();
        Ok(closed)
    }

    fn open_run(&self, partition: &str) -> Result<Option<u64>> {
        let st = self.lock();
        Ok(st
            .runs
            .range((partition.to_owned(), 0)..=(partition.to_owned(), u64::MAX))
            .find(|(_, r)| r.detail.header.status == RunStatus::Open)
            .map(|((_, n), _)| *n))
    }

    fn partitions(&self) -> Result<Vec<String>> {
        Ok(self.lock().partitions.iter().cloned().collect())
    }

    fn list_run_headers(&self, partition: Option<&str>) -> Result<Vec<RunHeader>> {
        let st = self.lock();
        Ok(st
            .runs
            .values()
            .map(|r| &r.detail.header)
            .filter(|h| partition.is_none_or(|p| h.partition == p))
            .cloned()
            .collect())
    }

    fn get_run_detail(&self, partition: &str, run_number: u64) -> Result<RunDetail> {
        let st = self.lock();
        let mut detail = st
            .runs
            .get(&(partition.to_owned(), run_number))
            .ok_or_else(|| unknown(partition, run_number))?
            .detail
            .clone();
        detail.sort_records();
        Ok(detail)
    }

    fn orphans(&self, partition: &str) -> Result<Vec<OrphanRecord>> {
        Ok(self.lock().orphans.get(partition).cloned().unwrap_or_default())
    }

    fn get_attachment(&self, digest: &str) -> Result<(Attachment, Vec<u8>)> {
        self.lock()
            .blobs
            .get(digest)
            .cloned()
            .ok_or_else(|| StoreError::UnknownAttachment(digest.to_owned()))
    }

    fn blob_digests(&self) -> Result<Vec<String>> {
        Ok(self.lock().blobs.keys().cloned().collect())
    }

    fn put_user(&self, user: &User) -> Result<()> {
        self.lock().users.insert(user.username.clone(), user.clone());
        Ok(())
    }

    fn get_user(&self, username: &str) -> Result<Option<User>> {
        Ok(self.lock().users.get(username).cloned())
    }

    fn list_users(&self) -> Result<Vec<User>> {
        Ok(self.lock().users.values().cloned().collect())
    }
}
