use std::collections::HashMap;
use std::fs::{self, File, OpenOptions as FsOpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::xml;
use super::{
    check_is, check_new_header, check_partition, close_header, last_activity, map_io_create,
    verify_blobs, Backend, BackendId, OpenOptions, OrphanPayload, OrphanRecord, Result, RunDetail,
    StoreError, StoredIs, StoredMrs, REPOSITORY_VERSION,
};
use crate::model::{
    Attachment, ClosedStatus, Comment, IsInfo, MrsMessage, NewComment, RunHeader, RunStatus,
    Timestamp, User,
};

pub(super) const META_FILE: &str = "obk-meta.json";
const USERS_FILE: &str = "obk-users.json";
const ROOT_LOCK: &str = ".obk-lock";
const PARTITION_LOCK: &str = ".lock";
const ATTACHMENTS_DIR: &str = "attachments";
const ORPHANS_FILE: &str = "orphans.journal";
const FORMAT: &str = "obk-filestore";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format: String,
    version: u32,
    partitions: Vec<String>,
}

/// One line of an open run's journal.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum JournalEntry {
    Mrs { record_id: u64, message: MrsMessage },
    Is { record_id: u64, info: IsInfo },
    Comment { comment: Comment },
}

/// Per-run XML file store.
///
/// Layout under `root`:
///
/// ```text
/// obk-meta.json                      format, version, partition list
/// obk-users.json                     logbook accounts
/// <partition>/run_0000000001.xml     one document per run
/// <partition>/run_0000000001.journal records of the run while it is open
/// <partition>/orphans.journal        data received with no open run
/// <partition>/attachments/<digest>   attachment blobs (+ <digest>.json metadata)
/// ```
///
/// Writers hold an in-process mutex plus an advisory file lock on
/// `<partition>/.lock`, so separate processes (acquisition server, offline
/// comment tool) can share a repository.
pub struct FileStore {
    root: PathBuf,
    writable: bool,
    durable: bool,
    slots: Mutex<HashMap<String, Arc<Mutex<Slot>>>>,
    root_mutex: Mutex<()>,
}

struct Slot {
    dir: PathBuf,
    lock: Option<File>,
    open: Option<OpenRun>,
}

/// Cached bookkeeping of the run whose journal we last wrote. Validated
/// against the journal length before use, since another process may have
/// appended in between.
struct OpenRun {
    run_number: u64,
    journal_len: u64,
    next_record_id: u64,
    next_comment_id: u64,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn run_stem(run_number: u64) -> String {
    format!("run_{run_number:010}")
}

fn parse_run_file(name: &str, ext: &str) -> Option<u64> {
    let digits = name.strip_prefix("run_")?.strip_suffix(ext)?;
    (digits.len() >= 10 && digits.bytes().all(|b| b.is_ascii_digit()))
        .then(|| digits.parse().ok())
        .flatten()
}

fn corrupt(path: &Path, msg: impl std::fmt::Display) -> StoreError {
    StoreError::Corrupt(format!("{}: {msg}", path.display()))
}

fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir)?.sync_all()?;
    Ok(())
}

/// Writes `data` to `path` through a temporary file and rename, so readers
/// see either the old or the new content.
fn write_atomic(path: &Path, data: &[u8], durable: bool) -> Result<()> {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp-{}-{n}", std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(data)?;
        if durable {
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        if durable {
            if let Some(dir) = path.parent() {
                sync_dir(dir)?;
            }
        }
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Complete lines of a journal; a trailing partial line (torn write) is
/// ignored. Returns the parsed entries and the byte length of the complete
/// prefix.
fn read_journal_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Vec<T>, u64)> {
    let mut data = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut data)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e.into()),
    }
    let complete = data.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut out = Vec::new();
    for line in data[..complete].split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
        out.push(serde_json::from_slice(line).map_err(|e| corrupt(path, e))?);
    }
    Ok((out, complete as u64))
}

fn append_line(path: &Path, expected_len: u64, line: &[u8], durable: bool) -> Result<u64> {
    let mut f = FsOpenOptions::new().write(true).open(path)?;
    let len = f.metadata()?.len();
    if len != expected_len {
        // Drop a torn tail left by a crashed writer.
        f.set_len(expected_len)?;
    }
    f.seek(SeekFrom::Start(expected_len))?;
    let mut buf = Vec::with_capacity(line.len() + 1);
    buf.extend_from_slice(line);
    buf.push(b'\n');
    f.write_all(&buf)?;
    if durable {
        f.sync_data()?;
    }
    Ok(expected_len + buf.len() as u64)
}

impl FileStore {
    pub fn create(root: &Path) -> Result<Self> {
        match fs::read_dir(root) {
            Ok(mut entries) => {
                if entries.next().is_some() {
                    return Err(StoreError::AlreadyExists(root.to_owned()));
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                fs::create_dir_all(root).map_err(|e| map_io_create(root, e))?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotADirectory => {
                return Err(StoreError::AlreadyExists(root.to_owned()))
            }
            Err(e) => return Err(map_io_create(root, e)),
        }
        let meta = Meta {
            format: FORMAT.into(),
            version: REPOSITORY_VERSION,
            partitions: Vec::new(),
        };
        let body = serde_json::to_vec_pretty(&meta).map_err(std::io::Error::from)?;
        File::create(root.join(ROOT_LOCK)).map_err(|e| map_io_create(root, e))?;
        write_atomic(&root.join(META_FILE), &body, true).map_err(|e| match e {
            StoreError::Io(io) => map_io_create(root, io),
            other => other,
        })?;
        Self::open(root, OpenOptions::default())
    }

    pub fn open(root: &Path, options: OpenOptions) -> Result<Self> {
        let store = FileStore {
            root: root.to_owned(),
            writable: options.writable,
            durable: options.durable,
            slots: Mutex::new(HashMap::new()),
            root_mutex: Mutex::new(()),
        };
        let meta = store.read_meta()?;
        if meta.format != FORMAT || meta.version != REPOSITORY_VERSION {
            return Err(StoreError::VersionMismatch {
                found: format!("{} v{}", meta.format, meta.version),
                expected: REPOSITORY_VERSION,
            });
        }
        Ok(store)
    }

    fn read_meta(&self) -> Result<Meta> {
        let path = self.root.join(META_FILE);
        let data = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::NoRepository(self.root.clone()),
            _ => StoreError::Io(e),
        })?;
        serde_json::from_slice(&data).map_err(|e| corrupt(&path, e))
    }

    fn ensure_writable(&self) -> Result<()> {
        if self.writable {
            Ok(())
        } else {
            Err(StoreError::ReadOnly)
        }
    }

    /// Runs `f` under the repository-wide lock (meta and users files).
    fn with_root_lock<T>(&self, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let _guard = self.root_mutex.lock().unwrap_or_else(|p| p.into_inner());
        let lock = File::open(self.root.join(ROOT_LOCK))?;
        lock.lock()?;
        let out = f();
        let _ = lock.unlock();
        out
    }

    fn partition_dir(&self, partition: &str) -> PathBuf {
        self.root.join(partition)
    }

    /// Creates the partition directory and registers it in the meta file.
    fn create_partition(&self, partition: &str) -> Result<()> {
        self.with_root_lock(|| {
            let dir = self.partition_dir(partition);
            fs::create_dir_all(dir.join(ATTACHMENTS_DIR))?;
            let lock = dir.join(PARTITION_LOCK);
            if !lock.exists() {
                File::create(&lock)?;
            }
            let mut meta = self.read_meta()?;
            if !meta.partitions.iter().any(|p| p == partition) {
                meta.partitions.push(partition.to_owned());
                meta.partitions.sort();
                let body = serde_json::to_vec_pretty(&meta).map_err(std::io::Error::from)?;
                write_atomic(&self.root.join(META_FILE), &body, self.durable)?;
            }
            Ok(())
        })
    }

    fn slot(&self, partition: &str) -> Arc<Mutex<Slot>> {
        let mut slots = self.slots.lock().unwrap_or_else(|p| p.into_inner());
        slots
            .entry(partition.to_owned())
            .or_insert_with(|| {
                Arc::new(Mutex::new(Slot {
                    dir: self.partition_dir(partition),
                    lock: None,
                    open: None,
                }))
            })
            .clone()
    }

    /// Locks a partition for writing, creating it when `create` is set.
    /// Returns `Ok(None)` if the partition does not exist.
    fn write_partition<T>(
        &self,
        partition: &str,
        create: bool,
        f: impl FnOnce(&mut Slot) -> Result<T>,
    ) -> Result<Option<T>> {
        self.ensure_writable()?;
        check_partition(partition)?;
        let dir = self.partition_dir(partition);
        if !dir.join(PARTITION_LOCK).exists() {
            if !create {
                return Ok(None);
            }
            self.create_partition(partition)?;
        }
        let slot = self.slot(partition);
        let mut guard = slot.lock().unwrap_or_else(|p| p.into_inner());
        let lock = Self::lock_file(&mut guard)?;
        lock.lock()?;
        let out = f(&mut guard);
        if let Some(lock) = &guard.lock {
            let _ = lock.unlock();
        }
        out.map(Some)
    }

    /// Locks a partition for reading. Returns `Ok(None)` if it does not exist.
    fn read_partition<T>(&self, partition: &str, f: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
        if !crate::model::is_valid_partition(partition) {
            return Ok(None);
        }
        let dir = self.partition_dir(partition);
        if !dir.join(PARTITION_LOCK).exists() {
            return Ok(None);
        }
        let slot = self.slot(partition);
        let mut guard = slot.lock().unwrap_or_else(|p| p.into_inner());
        let lock = Self::lock_file(&mut guard)?;
        lock.lock_shared()?;
        let out = f(&guard.dir);
        if let Some(lock) = &guard.lock {
            let _ = lock.unlock();
        }
        out.map(Some)
    }

    fn lock_file(slot: &mut Slot) -> Result<&File> {
        if slot.lock.is_none() {
            slot.lock = Some(File::open(slot.dir.join(PARTITION_LOCK))?);
        }
        Ok(slot.lock.as_ref().expect("just set"))
    }

    fn xml_path(dir: &Path, run_number: u64) -> PathBuf {
        dir.join(format!("{}.xml", run_stem(run_number)))
    }

    fn journal_path(dir: &Path, run_number: u64) -> PathBuf {
        dir.join(format!("{}.journal", run_stem(run_number)))
    }

    fn read_run_file(path: &Path) -> Result<Option<RunDetail>> {
        match fs::read_to_string(path) {
            Ok(text) => xml::read_run(&text).map(Some).map_err(|e| corrupt(path, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn read_header_file(path: &Path) -> Result<RunHeader> {
        // Headers come first; stop reading once the header is complete.
        let mut reader = BufReader::new(File::open(path)?);
        let mut text = String::new();
        loop {
            let n = reader.read_line(&mut text)?;
            if n == 0 || text.ends_with("</header>\n") {
                break;
            }
        }
        xml::read_header(&text).map_err(|e| corrupt(path, e))
    }

    /// Run document plus journal contents, merged in arrival order.
    fn load_run(dir: &Path, run_number: u64) -> Result<Option<(RunDetail, u64)>> {
        let Some(mut detail) = Self::read_run_file(&Self::xml_path(dir, run_number))? else {
            return Ok(None);
        };
        let mut journal_len = 0;
        if detail.header.status == RunStatus::Open {
            let (entries, len) = read_journal_lines(&Self::journal_path(dir, run_number))?;
            journal_len = len;
            for entry in entries {
                match entry {
                    JournalEntry::Mrs { record_id, message } => {
                        detail.mrs.push(StoredMrs { record_id, message })
                    }
                    JournalEntry::Is { record_id, info } => detail.is.push(StoredIs { record_id, info }),
                    JournalEntry::Comment { comment } => detail.comments.push(comment),
                }
            }
        }
        Ok(Some((detail, journal_len)))
    }

    /// Returns up-to-date cached state for an open run, rebuilding it from
    /// disk if the journal changed underneath us.
    fn open_state<'s>(slot: &'s mut Slot, partition: &str, run_number: u64) -> Result<&'s mut OpenRun> {
        let journal = Self::journal_path(&slot.dir, run_number);
        let on_disk_len = match fs::metadata(&journal) {
            Ok(m) => Some(m.len()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let valid = matches!(
            (&slot.open, on_disk_len),
            (Some(o), Some(len)) if o.run_number == run_number && o.journal_len == len
        );
        if !valid {
            slot.open = None;
            let Some((detail, journal_len)) = Self::load_run(&slot.dir, run_number)? else {
                return Err(StoreError::UnknownRun {
                    partition: partition.to_owned(),
                    run_number,
                });
            };
            if detail.header.status != RunStatus::Open || on_disk_len.is_none() {
                return Err(StoreError::RunClosed {
                    partition: partition.to_owned(),
                    run_number,
                });
            }
            let last_record = detail
                .mrs
                .iter()
                .map(|r| r.record_id)
                .chain(detail.is.iter().map(|r| r.record_id))
                .max()
                .unwrap_or(0);
            let last_comment = detail.comments.iter().map(|c| c.comment_id).max().unwrap_or(0);
            slot.open = Some(OpenRun {
                run_number,
                journal_len,
                next_record_id: last_record + 1,
                next_comment_id: last_comment + 1,
            });
        }
        Ok(slot.open.as_mut().expect("validated above"))
    }

    fn append_entry(&self, slot: &mut Slot, partition: &str, run_number: u64, entry: impl FnOnce(&mut OpenRun) -> JournalEntry) -> Result<()> {
        let journal = Self::journal_path(&slot.dir, run_number);
        let durable = self.durable;
        let state = Self::open_state(slot, partition, run_number)?;
        let line = serde_json::to_vec(&entry(state)).map_err(std::io::Error::from)?;
        match append_line(&journal, state.journal_len, &line, durable) {
            Ok(len) => {
                state.journal_len = len;
                Ok(())
            }
            Err(e) => {
                slot.open = None;
                Err(e)
            }
        }
    }

    /// Lists run numbers of the partition directory: all run documents and
    /// the runs that still have a journal.
    fn scan_dir(dir: &Path) -> Result<(Vec<u64>, Vec<u64>)> {
        let mut runs = Vec::new();
        let mut journals = Vec::new();
        for entry in fs::read_dir(dir)? {
            let name = entry?.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(n) = parse_run_file(name, ".xml") {
                runs.push(n);
            } else if let Some(n) = parse_run_file(name, ".journal") {
                journals.push(n);
            }
        }
        runs.sort_unstable();
        journals.sort_unstable();
        Ok((runs, journals))
    }

    /// Open run of a partition; removes stale journals of closed or
    /// never-created runs when `cleanup` is set.
    fn find_open(dir: &Path, cleanup: bool) -> Result<Option<u64>> {
        let (runs, journals) = Self::scan_dir(dir)?;
        let mut open = None;
        for n in journals {
            let is_open = runs.binary_search(&n).is_ok()
                && Self::read_header_file(&Self::xml_path(dir, n))?.status == RunStatus::Open;
            if is_open {
                open = Some(n);
            } else if cleanup {
                let _ = fs::remove_file(Self::journal_path(dir, n));
            }
        }
        Ok(open)
    }

    fn store_blobs(&self, dir: &Path, comment: &NewComment, blobs: &[Vec<u8>]) -> Result<()> {
        let att_dir = dir.join(ATTACHMENTS_DIR);
        for (a, data) in comment.attachments.iter().zip(blobs) {
            let blob = att_dir.join(&a.digest);
            if !blob.exists() {
                let meta = serde_json::to_vec(a).map_err(std::io::Error::from)?;
                write_atomic(&att_dir.join(format!("{}.json", a.digest)), &meta, self.durable)?;
                write_atomic(&blob, data, self.durable)?;
            }
        }
        Ok(())
    }

    fn rewrite_closed(&self, dir: &Path, detail: &RunDetail) -> Result<()> {
        let path = Self::xml_path(dir, detail.header.run_number);
        write_atomic(&path, xml::write_run(detail).as_bytes(), self.durable)?;
        let _ = fs::remove_file(Self::journal_path(dir, detail.header.run_number));
        Ok(())
    }

    fn close_run(&self, partition: &str, run_number: u64, close: impl FnOnce(&RunDetail) -> Result<RunHeader>) -> Result<RunHeader> {
        let unknown = || StoreError::UnknownRun {
            partition: partition.to_owned(),
            run_number,
        };
        self.write_partition(partition, false, |slot| {
            slot.open = None;
            let (mut detail, _) = Self::load_run(&slot.dir, run_number)?.ok_or_else(unknown)?;
            let journal_exists = Self::journal_path(&slot.dir, run_number).exists();
            if detail.header.status == RunStatus::Open && !journal_exists {
                return Err(corrupt(&slot.dir, format!("open run {run_number} has no journal")));
            }
            let header = close(&detail)?;
            detail.header = header.clone();
            self.rewrite_closed(&slot.dir, &detail)?;
            Ok(header)
        })?
        .ok_or_else(unknown)
    }
}

impl Backend for FileStore {
    fn id(&self) -> BackendId {
        BackendId::FileStore
    }

    fn root(&self) -> &Path {
        &self.root
    }

    fn writable(&self) -> bool {
        self.writable
    }

    fn begin_run(&self, header: &RunHeader) -> Result<()> {
        check_new_header(header)?;
        let partition = &header.partition;
        self.write_partition(partition, true, |slot| {
            // Re-list the directory on every start of run; this is the
            // run-number-dependent cost of the per-run file layout.
            let (runs, _) = Self::scan_dir(&slot.dir)?;
            if runs.binary_search(&header.run_number).is_ok() {
                return Err(StoreError::DuplicateRun {
                    partition: partition.clone(),
                    run_number: header.run_number,
                });
            }
            if let Some(open_run) = Self::find_open(&slot.dir, true)? {
                return Err(StoreError::AlreadyOpen {
                    partition: partition.clone(),
                    open_run,
                });
            }
            let journal = Self::journal_path(&slot.dir, header.run_number);
            let f = File::create(&journal)?;
            if self.durable {
                f.sync_all()?;
            }
            let detail = RunDetail {
                header: header.clone(),
                mrs: Vec::new(),
                is: Vec::new(),
                comments: Vec::new(),
            };
            let written = write_atomic(
                &Self::xml_path(&slot.dir, header.run_number),
                xml::write_run(&detail).as_bytes(),
                self.durable,
            );
            if let Err(e) = written {
                let _ = fs::remove_file(&journal);
                return Err(e);
            }
            slot.open = Some(OpenRun {
                run_number: header.run_number,
                journal_len: 0,
                next_record_id: 1,
                next_comment_id: 1,
            });
            Ok(())
        })?;
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
        self.close_run(partition, run_number, |detail| {
            close_header(detail.header.clone(), status, num_events, end_time)
        })
    }

    fn append_mrs(&self, partition: &str, run_number: u64, message: &MrsMessage) -> Result<u64> {
        let mut id = 0;
        self.write_partition(partition, false, |slot| {
            self.append_entry(slot, partition, run_number, |st| {
                id = st.next_record_id;
                st.next_record_id += 1;
                JournalEntry::Mrs {
                    record_id: id,
                    message: message.clone(),
                }
            })
        })?
        .ok_or_else(|| StoreError::UnknownRun {
            partition: partition.to_owned(),
            run_number,
        })?;
        Ok(id)
    }

    fn append_is(&self, partition: &str, run_number: u64, info: &IsInfo) -> Result<u64> {
        check_is(info)?;
        let mut id = 0;
        self.write_partition(partition, false, |slot| {
            self.append_entry(slot, partition, run_number, |st| {
                id = st.next_record_id;
                st.next_record_id += 1;
                JournalEntry::Is {
                    record_id: id,
                    info: info.clone(),
                }
            })
        })?
        .ok_or_else(|| StoreError::UnknownRun {
            partition: partition.to_owned(),
            run_number,
        })?;
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
        let unknown = || StoreError::UnknownRun {
            partition: partition.to_owned(),
            run_number,
        };
        self.write_partition(partition, false, |slot| {
            let xml_path = Self::xml_path(&slot.dir, run_number);
            if !xml_path.exists() {
                return Err(unknown());
            }
            match Self::open_state(slot, partition, run_number) {
                Ok(_) => {
                    self.store_blobs(&slot.dir, comment, blobs)?;
                    let mut id = 0;
                    self.append_entry(slot, partition, run_number, |st| {
                        id = st.next_comment_id;
                        st.next_comment_id += 1;
                        JournalEntry::Comment {
                            comment: comment.clone().with_id(id),
                        }
                    })?;
                    Ok(id)
                }
                Err(StoreError::RunClosed { .. }) => {
                    let (mut detail, _) = Self::load_run(&slot.dir, run_number)?.ok_or_else(unknown)?;
                    let id = detail.comments.iter().map(|c| c.comment_id).max().unwrap_or(0) + 1;
                    self.store_blobs(&slot.dir, comment, blobs)?;
                    detail.comments.push(comment.clone().with_id(id));
                    write_atomic(&xml_path, xml::write_run(&detail).as_bytes(), self.durable)?;
                    Ok(id)
                }
                Err(e) => Err(e),
            }
        })?
        .ok_or_else(unknown)
    }

    fn append_orphan(&self, partition: &str, payload: &OrphanPayload, blobs: &[Vec<u8>]) -> Result<u64> {
        match payload {
            OrphanPayload::Comment(c) => verify_blobs(c, blobs)?,
            OrphanPayload::Is(info) => check_is(info)?,
            OrphanPayload::Mrs(_) => {}
        }
        let id = self.write_partition(partition, true, |slot| {
            let path = slot.dir.join(ORPHANS_FILE);
            let (existing, len) = read_journal_lines::<OrphanRecord>(&path)?;
            if let OrphanPayload::Comment(c) = payload {
                self.store_blobs(&slot.dir, c, blobs)?;
            }
            let record = OrphanRecord {
                orphan_id: existing.len() as u64 + 1,
                payload: payload.clone(),
            };
            if len == 0 && !path.exists() {
                File::create(&path)?;
            }
            let line = serde_json::to_vec(&record).map_err(std::io::Error::from)?;
            append_line(&path, len, &line, self.durable)?;
            Ok(record.orphan_id)
        })?;
        Ok(id.expect("partition created on demand"))
    }

    fn force_close(&self, partition: &str, run_number: u64) -> Result<RunHeader> {
        self.close_run(partition, run_number, |detail| {
            close_header(
                detail.header.clone(),
                ClosedStatus::Bad,
                detail.header.num_events,
                last_activity(detail),
            )
        })
    }

    fn open_run(&self, partition: &str) -> Result<Option<u64>> {
        Ok(self
            .read_partition(partition, |dir| Self::find_open(dir, false))?
            .flatten())
    }

    fn partitions(&self) -> Result<Vec<String>> {
        Ok(self.read_meta()?.partitions)
    }

    fn list_run_headers(&self, partition: Option<&str>) -> Result<Vec<RunHeader>> {
        let partitions = match partition {
            Some(p) => vec![p.to_owned()],
            None => self.partitions()?,
        };
        let mut out = Vec::new();
        for p in partitions {
            let headers = self.read_partition(&p, |dir| {
                let (runs, _) = Self::scan_dir(dir)?;
                runs.iter()
                    .map(|&n| Self::read_header_file(&Self::xml_path(dir, n)))
                    .collect::<Result<Vec<_>>>()
            })?;
            out.extend(headers.unwrap_or_default());
        }
        Ok(out)
    }

    fn get_run_detail(&self, partition: &str, run_number: u64) -> Result<RunDetail> {
        let detail = self
            .read_partition(partition, |dir| Self::load_run(dir, run_number))?
            .flatten();
        match detail {
            Some((mut d, _)) => {
                d.sort_records();
                Ok(d)
            }
            None => Err(StoreError::UnknownRun {
                partition: partition.to_owned(),
                run_number,
            }),
        }
    }

    fn orphans(&self, partition: &str) -> Result<Vec<OrphanRecord>> {
        Ok(self
            .read_partition(partition, |dir| {
                read_journal_lines(&dir.join(ORPHANS_FILE)).map(|(v, _)| v)
            })?
            .unwrap_or_default())
    }

    fn get_attachment(&self, digest: &str) -> Result<(Attachment, Vec<u8>)> {
        if crate::model::is_valid_digest(digest) {
            for p in self.partitions()? {
                let dir = self.partition_dir(&p).join(ATTACHMENTS_DIR);
                let blob = dir.join(digest);
                if blob.exists() {
                    let meta_path = dir.join(format!("{digest}.json"));
                    let meta: Attachment = serde_json::from_slice(&fs::read(&meta_path)?)
                        .map_err(|e| corrupt(&meta_path, e))?;
                    return Ok((meta, fs::read(&blob)?));
                }
            }
        }
        Err(StoreError::UnknownAttachment(digest.to_owned()))
    }

    fn blob_digests(&self) -> Result<Vec<String>> {
        let mut out = std::collections::BTreeSet::new();
        for p in self.partitions()? {
            let dir = self.partition_dir(&p).join(ATTACHMENTS_DIR);
            let Ok(entries) = fs::read_dir(&dir) else { continue };
            for entry in entries {
                let name = entry?.file_name();
                if let Some(name) = name.to_str().filter(|n| crate::model::is_valid_digest(n)) {
                    out.insert(name.to_owned());
                }
            }
        }
        Ok(out.into_iter().collect())
    }

    fn put_user(&self, user: &User) -> Result<()> {
        self.ensure_writable()?;
        self.with_root_lock(|| {
            let mut users = self.list_users()?;
            match users.iter_mut().find(|u| u.username == user.username) {
                Some(u) => *u = user.clone(),
                None => users.push(user.clone()),
            }
            users.sort_by(|a, b| a.username.cmp(&b.username));
            let body = serde_json::to_vec_pretty(&users).map_err(std::io::Error::from)?;
            write_atomic(&self.root.join(USERS_FILE), &body, self.durable)
        })
    }

    fn get_user(&self, username: &str) -> Result<Option<User>> {
        Ok(self.list_users()?.into_iter().find(|u| u.username == username))
    }

    fn list_users(&self) -> Result<Vec<User>> {
        let path = self.root.join(USERS_FILE);
        match fs::read(&path) {
            Ok(data) => serde_json::from_slice(&data).map_err(|e| corrupt(&path, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }
}
