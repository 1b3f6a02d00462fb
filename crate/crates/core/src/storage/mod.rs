//! Storage backend abstraction.
//!
//! A repository holds runs grouped by partition. Each run has a header, an
//! ordered list of MRS and IS records, and comments with content-addressed
//! attachments. Two persistent implementations exist:
//!
//! * [`FileStore`]: one human-readable XML document per run under
//!   `root/<partition>/run_<10-digit number>.xml`, with open-run records kept
//!   in a journal until the run is closed.
//! * [`RelationalStore`]: a single embedded SQLite database whose schema maps
//!   IS objects onto an object row plus one row per attribute.
//!
//! [`MemoryStore`] implements the same contract without persistence.
//!
//! Record ids are assigned per run from one counter shared by MRS and IS
//! records, starting at 1; comment ids are a separate per-run counter.
//! Both are identical across backends for the same operation sequence, which
//! is what makes [`export_canonical`] backend independent.

mod export;
mod file;
mod memory;
mod relational;
mod xml;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{
    ClosedStatus, Comment, IsInfo, MrsMessage, NewComment, RunHeader, SearchCriteria, Timestamp,
    User,
};
use crate::query::{IsMatch, IsQuery, QueryError};

pub use export::{export_canonical, export_canonical_string, EXPORT_HEADER};
pub use file::FileStore;
pub use memory::MemoryStore;
pub use relational::{RelationalStore, SCHEMA_SQL};

/// Repository structure version written by [`create_repository`].
pub const REPOSITORY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackendId {
    FileStore,
    RelationalStore,
    /// Volatile in-process store; cannot be created on disk.
    Memory,
}

impl BackendId {
    /// Short name used by the command line (`file` / `relational`).
    pub fn short_name(self) -> &'static str {
        match self {
            BackendId::FileStore => "file",
            BackendId::RelationalStore => "relational",
            BackendId::Memory => "memory",
        }
    }
}

impl std::str::FromStr for BackendId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "file" | "FileStore" => Ok(BackendId::FileStore),
            "relational" | "RelationalStore" => Ok(BackendId::RelationalStore),
            "memory" | "Memory" => Ok(BackendId::Memory),
            other => Err(format!("unknown backend {other:?} (expected file or relational)")),
        }
    }
}

impl std::fmt::Display for BackendId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("repository already exists at {0}")]
    AlreadyExists(PathBuf),
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("no repository at {0}")]
    NoRepository(PathBuf),
    #[error("repository version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("run {partition}/{run_number} already exists")]
    DuplicateRun { partition: String, run_number: u64 },
    #[error("partition {partition} already has open run {open_run}")]
    AlreadyOpen { partition: String, open_run: u64 },
    #[error("run {partition}/{run_number} is not open")]
    NotOpen { partition: String, run_number: u64 },
    #[error("run {partition}/{run_number} is closed")]
    RunClosed { partition: String, run_number: u64 },
    #[error("unknown run {partition}/{run_number}")]
    UnknownRun { partition: String, run_number: u64 },
    #[error("unknown attachment {0}")]
    UnknownAttachment(String),
    #[error("attachment {filename:?}: declared digest/size does not match content")]
    DigestMismatch { filename: String },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("repository is read-only")]
    ReadOnly,
    #[error("corrupt repository: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("database error: {0}")]
    Sql(#[from] rusqlite::Error),
}

impl StoreError {
    /// Stable upper-case code used on the acquisition wire.
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::AlreadyExists(_) => "ALREADY_EXISTS",
            StoreError::PermissionDenied(_) => "PERMISSION_DENIED",
            StoreError::NoRepository(_) => "NO_REPOSITORY",
            StoreError::VersionMismatch { .. } => "VERSION_MISMATCH",
            StoreError::DuplicateRun { .. } => "DUPLICATE_RUN",
            StoreError::AlreadyOpen { .. } => "ALREADY_OPEN",
            StoreError::NotOpen { .. } => "NOT_OPEN",
            StoreError::RunClosed { .. } => "RUN_CLOSED",
            StoreError::UnknownRun { .. } => "UNKNOWN_RUN",
            StoreError::UnknownAttachment(_) => "UNKNOWN_ATTACHMENT",
            StoreError::DigestMismatch { .. } => "DIGEST_MISMATCH",
            StoreError::Invalid(_) => "INVALID",
            StoreError::ReadOnly => "READ_ONLY",
            StoreError::Corrupt(_) => "CORRUPT",
            StoreError::Query(_) => "QUERY",
            StoreError::Io(_) => "IO",
            StoreError::Sql(_) => "STORAGE",
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredMrs {
    pub record_id: u64,
    pub message: MrsMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredIs {
    pub record_id: u64,
    pub info: IsInfo,
}

/// Everything stored for one run. Records are ordered by
/// `(timestamp, record_id)` and comments by `comment_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDetail {
    pub header: RunHeader,
    pub mrs: Vec<StoredMrs>,
    pub is: Vec<StoredIs>,
    pub comments: Vec<Comment>,
}

impl RunDetail {
    pub fn sort_records(&mut self) {
        self.mrs.sort_by_key(|r| (r.message.timestamp, r.record_id));
        self.is.sort_by_key(|r| (r.info.timestamp, r.record_id));
        self.comments.sort_by_key(|c| c.comment_id);
    }
}

/// Data that arrived while no run was open in its partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "record")]
pub enum OrphanPayload {
    #[serde(rename = "MRS")]
    Mrs(MrsMessage),
    #[serde(rename = "IS")]
    Is(IsInfo),
    #[serde(rename = "COMMENT")]
    Comment(NewComment),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrphanRecord {
    pub orphan_id: u64,
    #[serde(flatten)]
    pub payload: OrphanPayload,
}

/// Options for opening an existing repository.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpenOptions {
    pub writable: bool,
    /// Flush every acknowledged write to stable storage (fsync /
    /// `synchronous=FULL`) instead of leaving it in the OS page cache.
    pub durable: bool,
}

impl Default for OpenOptions {
    fn default() -> Self {
        OpenOptions {
            writable: true,
            durable: false,
        }
    }
}

/// Operations every storage backend implements.
///
/// Writers to the same partition are serialized by the backend; readers see
/// only committed runs and records.
pub trait Backend: Send + Sync {
    fn id(&self) -> BackendId;

    fn root(&self) -> &Path;

    fn writable(&self) -> bool;

    /// Stores a new run; `header.status` must be `Open`.
    fn begin_run(&self, header: &RunHeader) -> Result<()>;

    fn end_run(
        &self,
        partition: &str,
        run_number: u64,
        status: ClosedStatus,
        num_events: u64,
        end_time: Timestamp,
    ) -> Result<RunHeader>;

    fn append_mrs(&self, partition: &str, run_number: u64, message: &MrsMessage) -> Result<u64>;

    fn append_is(&self, partition: &str, run_number: u64, info: &IsInfo) -> Result<u64>;

    /// Adds a comment to an open or closed run. `blobs[i]` is the content of
    /// `comment.attachments[i]`.
    fn append_comment(
        &self,
        partition: &str,
        run_number: u64,
        comment: &NewComment,
        blobs: &[Vec<u8>],
    ) -> Result<u64>;

    fn append_orphan(&self, partition: &str, payload: &OrphanPayload, blobs: &[Vec<u8>]) -> Result<u64>;

    /// Closes a dangling open run as `Bad`. The end time is the latest
    /// timestamp known for the run (start time or any record/comment).
    fn force_close(&self, partition: &str, run_number: u64) -> Result<RunHeader>;

    fn open_run(&self, partition: &str) -> Result<Option<u64>>;

    /// Partition names in ascending order.
    fn partitions(&self) -> Result<Vec<String>>;

    /// Headers ordered by `(partition, run_number)`.
    fn list_run_headers(&self, partition: Option<&str>) -> Result<Vec<RunHeader>>;

    fn get_run_detail(&self, partition: &str, run_number: u64) -> Result<RunDetail>;

    /// Orphan records of a partition in arrival order.
    fn orphans(&self, partition: &str) -> Result<Vec<OrphanRecord>>;

    /// Attachment metadata (as first stored) and content.
    fn get_attachment(&self, digest: &str) -> Result<(crate::model::Attachment, Vec<u8>)>;

    /// Digests of every stored blob, ascending.
    fn blob_digests(&self) -> Result<Vec<String>>;

    fn put_user(&self, user: &User) -> Result<()>;

    fn get_user(&self, username: &str) -> Result<Option<User>>;

    fn list_users(&self) -> Result<Vec<User>>;

    /// Run search; backends may push the filter down to their engine.
    fn find_runs(&self, criteria: &SearchCriteria, include_open: bool) -> Result<Vec<RunHeader>> {
        criteria
            .validate()
            .map_err(|e| QueryError::InvalidCriteria(e.to_string()))?;
        let headers = self.list_run_headers(None)?;
        Ok(crate::query::filter_and_sort(headers, criteria, include_open))
    }

    fn find_is_instances(&self, query: &IsQuery) -> Result<Vec<IsMatch>> {
        query.validate()?;
        let mut out = Vec::new();
        for header in self.list_run_headers(query.partition.as_deref())? {
            let detail = self.get_run_detail(&header.partition, header.run_number)?;
            crate::query::collect_is_matches(&detail, query, &mut out);
        }
        crate::query::sort_is_matches(&mut out);
        Ok(out)
    }
}

/// A handle on an opened repository.
pub struct Repository {
    backend: Box<dyn Backend>,
}

impl std::fmt::Debug for Repository {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Repository")
            .field("backend", &self.backend.id())
            .field("root", &self.backend.root())
            .field("writable", &self.backend.writable())
            .finish()
    }
}

impl std::ops::Deref for Repository {
    type Target = dyn Backend;

    fn deref(&self) -> &Self::Target {
        self.backend.as_ref()
    }
}

impl Repository {
    pub fn from_backend(backend: Box<dyn Backend>) -> Self {
        Repository { backend }
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn into_backend(self) -> Box<dyn Backend> {
        self.backend
    }

    /// Opens an existing repository, detecting its backend from `root`:
    /// a directory is a file store, a regular file a relational store.
    pub fn open(root: &Path, options: OpenOptions) -> Result<Self> {
        let meta = std::fs::metadata(root).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::NoRepository(root.to_owned()),
            _ => StoreError::Io(e),
        })?;
        let backend: Box<dyn Backend> = if meta.is_dir() {
            Box::new(FileStore::open(root, options)?)
        } else {
            Box::new(RelationalStore::open(root, options)?)
        };
        Ok(Repository { backend })
    }

    /// Opens the repository at `root`, creating it with `backend` when absent.
    pub fn open_or_create(backend: BackendId, root: &Path, options: OpenOptions) -> Result<Self> {
        let exists = match backend {
            BackendId::FileStore => root.join(file::META_FILE).exists(),
            BackendId::RelationalStore => root.metadata().map(|m| m.len() > 0).unwrap_or(false),
            BackendId::Memory => return Ok(Repository::from_backend(Box::new(MemoryStore::new()))),
        };
        let repo = if exists {
            Repository::open(root, options)?
        } else {
            create_repository(backend, root)?;
            Repository::open(root, options)?
        };
        if repo.id() != backend {
            return Err(StoreError::Invalid(format!(
                "{} holds a {} repository, not {}",
                root.display(),
                repo.id(),
                backend
            )));
        }
        Ok(repo)
    }
}

/// Initializes an empty, version-stamped repository at `root`, which must
/// be absent or empty.
pub fn create_repository(backend: BackendId, root: &Path) -> Result<Repository> {
    let backend: Box<dyn Backend> = match backend {
        BackendId::FileStore => Box::new(FileStore::create(root)?),
        BackendId::RelationalStore => Box::new(RelationalStore::create(root)?),
        BackendId::Memory => Box::new(MemoryStore::new()),
    };
    Ok(Repository { backend })
}

pub(crate) fn map_io_create(root: &Path, e: std::io::Error) -> StoreError {
    match e.kind() {
        std::io::ErrorKind::PermissionDenied => {
            StoreError::PermissionDenied(format!("{}: {e}", root.display()))
        }
        std::io::ErrorKind::AlreadyExists => StoreError::AlreadyExists(root.to_owned()),
        _ => StoreError::Io(e),
    }
}

/// Checks that declared attachment metadata matches the supplied contents.
pub(crate) fn verify_blobs(comment: &NewComment, blobs: &[Vec<u8>]) -> Result<()> {
    comment.validate().map_err(|e| StoreError::Invalid(e.to_string()))?;
    if comment.attachments.len() != blobs.len() {
        return Err(StoreError::Invalid(format!(
            "{} attachments declared but {} contents supplied",
            comment.attachments.len(),
            blobs.len()
        )));
    }
    for (a, data) in comment.attachments.iter().zip(blobs) {
        if a.size_bytes != data.len() as u64 || a.digest != crate::model::content_digest(data) {
            return Err(StoreError::DigestMismatch {
                filename: a.filename.clone(),
            });
        }
    }
    Ok(())
}

pub(crate) fn check_partition(partition: &str) -> Result<()> {
    if crate::model::is_valid_partition(partition) {
        Ok(())
    } else {
        Err(StoreError::Invalid(format!("invalid partition name {partition:?}")))
    }
}

pub(crate) fn check_new_header(header: &RunHeader) -> Result<()> {
    let violations = crate::model::validate_header(header);
    if !violations.is_empty() {
        let codes: Vec<_> = violations.iter().map(|v| v.code()).collect();
        return Err(StoreError::Invalid(format!("run header: {}", codes.join(", "))));
    }
    if header.status != crate::model::RunStatus::Open {
        return Err(StoreError::Invalid("a new run must have status Open".into()));
    }
    Ok(())
}

pub(crate) fn check_is(info: &IsInfo) -> Result<()> {
    if let Some(a) = info.attributes.iter().find(|a| !crate::model::is_valid_name(&a.name)) {
        return Err(StoreError::Invalid(format!("invalid IS attribute name {:?}", a.name)));
    }
    match info.duplicate_attribute() {
        Some(name) => Err(StoreError::Invalid(format!("duplicate IS attribute {name:?}"))),
        None => Ok(()),
    }
}

/// The latest timestamp observed for a run, used as force-close end time.
pub(crate) fn last_activity(detail: &RunDetail) -> Timestamp {
    let mut t = detail.header.start_time;
    t = detail.mrs.iter().map(|r| r.message.timestamp).fold(t, Ord::max);
    t = detail.is.iter().map(|r| r.info.timestamp).fold(t, Ord::max);
    detail.comments.iter().map(|c| c.created_at).fold(t, Ord::max)
}

/// Validates an end-of-run transition and returns the closed header.
pub(crate) fn close_header(
    mut header: RunHeader,
    status: ClosedStatus,
    num_events: u64,
    end_time: Timestamp,
) -> Result<RunHeader> {
    if header.status != crate::model::RunStatus::Open {
        return Err(StoreError::NotOpen {
            partition: header.partition,
            run_number: header.run_number,
        });
    }
    header.status = status.into();
    header.num_events = num_events;
    header.end_time = Some(end_time);
    let violations = crate::model::validate_header(&header);
    if !violations.is_empty() {
        let codes: Vec<_> = violations.iter().map(|v| v.code()).collect();
        return Err(StoreError::Invalid(format!("run header: {}", codes.join(", "))));
    }
    Ok(header)
}

#[cfg(test)]
pub(crate) mod contract;
