use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use rusqlite::{params, Connection, OpenFlags, OptionalExtension, Row, Transaction, TransactionBehavior};

use super::{
    check_is, check_new_header, check_partition, close_header, last_activity, map_io_create,
    verify_blobs, Backend, BackendId, OpenOptions, OrphanPayload, OrphanRecord, Result, RunDetail,
    StoreError, StoredIs, StoredMrs, REPOSITORY_VERSION,
};
use crate::model::{
    fold_case, Attachment, Attribute, ClosedStatus, Comment, DetectorMask, IsInfo, MrsMessage,
    NewComment, Role, RunHeader, RunStatus, Scalar, ScalarType, SearchCriteria, SortDir, SortKey,
    Timestamp, TriggerType, User,
};
use crate::query::{IsMatch, IsQuery, PredicateOp, QueryError};

/// DDL of the relational store, version 1.
pub const SCHEMA_SQL: &str = include_str!("../../schema/relational_v1.sql");

const FORMAT: &str = "obk-relational";

/// Single-file SQLite repository.
///
/// All access goes through one connection guarded by a mutex; each write
/// is its own `BEGIN IMMEDIATE` transaction, so concurrent processes
/// sharing the file are serialized by SQLite's own locking.
pub struct RelationalStore {
    root: PathBuf,
    writable: bool,
    conn: Mutex<Connection>,
}

fn to_i64(n: u64) -> i64 {
    i64::try_from(n).unwrap_or(i64::MAX)
}

fn ts(ms: i64) -> rusqlite::Result<Timestamp> {
    Timestamp::from_millis(ms).ok_or_else(|| bad_column(format!("timestamp {ms} out of range")))
}

fn bad_column(msg: String) -> rusqlite::Error {
    rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, msg.into())
}

fn parse_col<T: std::str::FromStr>(s: String) -> rusqlite::Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| bad_column(e.to_string()))
}

const HEADER_COLUMNS: &str = "partition, run_number, start_time, end_time, status, num_events, \
     max_events, trigger_type, beam_type, detector_mask";

fn header_from_row(row: &Row<'_>) -> rusqlite::Result<RunHeader> {
    Ok(RunHeader {
        partition: row.get(0)?,
        run_number: row.get::<_, i64>(1)? as u64,
        start_time: ts(row.get(2)?)?,
        end_time: row.get::<_, Option<i64>>(3)?.map(ts).transpose()?,
        status: parse_col::<RunStatus>(row.get(4)?)?,
        num_events: row.get::<_, i64>(5)? as u64,
        max_events: row.get::<_, i64>(6)? as u64,
        trigger_type: TriggerType::new(&row.get::<_, String>(7)?),
        beam_type: row.get(8)?,
        detector_mask: DetectorMask(row.get::<_, i64>(9)? as u32),
    })
}

/// Column values for an attribute: (int, float, str, list_json).
type ValueColumns = (Option<i64>, Option<f64>, Option<String>, Option<String>);

fn value_columns(v: &Scalar) -> ValueColumns {
    match v {
        Scalar::Int(i) => (Some(*i), None, None, None),
        Scalar::Bool(b) => (Some(*b as i64), None, None, None),
        Scalar::Time(t) => (Some(t.as_millis()), None, None, None),
        Scalar::Float(x) => (None, Some(*x), None, None),
        Scalar::Str(s) => (None, None, Some(s.clone()), None),
        Scalar::List(_) => (None, None, None, Some(v.canonical_value_text())),
    }
}

/// Decodes an attribute from columns `tag, int, float, str, list` starting at `at`.
fn value_from_row(row: &Row<'_>, at: usize) -> rusqlite::Result<Scalar> {
    let tag: String = row.get(at)?;
    let ty = ScalarType::parse(&tag).ok_or_else(|| bad_column(format!("unknown value tag {tag:?}")))?;
    let missing = || bad_column(format!("missing value for {tag} attribute"));
    Ok(match ty {
        ScalarType::Int => Scalar::Int(row.get::<_, Option<i64>>(at + 1)?.ok_or_else(missing)?),
        ScalarType::Bool => Scalar::Bool(row.get::<_, Option<i64>>(at + 1)?.ok_or_else(missing)? != 0),
        ScalarType::Time => Scalar::Time(ts(row.get::<_, Option<i64>>(at + 1)?.ok_or_else(missing)?)?),
        ScalarType::Float => Scalar::Float(row.get::<_, Option<f64>>(at + 2)?.ok_or_else(missing)?),
        ScalarType::Str => Scalar::Str(row.get::<_, Option<String>>(at + 3)?.ok_or_else(missing)?),
        _ => {
            let text: String = row.get::<_, Option<String>>(at + 4)?.ok_or_else(missing)?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| bad_column(e.to_string()))?;
            Scalar::from_value_json(ty, &value).map_err(|e| bad_column(e.to_string()))?
        }
    })
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("model types serialize")
}

fn from_json<T: serde::de::DeserializeOwned>(s: &str) -> rusqlite::Result<T> {
    serde_json::from_str(s).map_err(|e| bad_column(e.to_string()))
}

struct RunRow {
    id: i64,
    status: RunStatus,
}

fn find_run(conn: &Connection, partition: &str, run_number: u64) -> Result<Option<RunRow>> {
    let row = conn
        .prepare_cached("SELECT id, status FROM runs WHERE partition = ?1 AND run_number = ?2")?
        .query_row(params![partition, to_i64(run_number)], |r| {
            Ok(RunRow {
                id: r.get(0)?,
                status: parse_col(r.get(1)?)?,
            })
        })
        .optional()?;
    Ok(row)
}

fn require_run(conn: &Connection, partition: &str, run_number: u64) -> Result<RunRow> {
    find_run(conn, partition, run_number)?.ok_or_else(|| StoreError::UnknownRun {
        partition: partition.to_owned(),
        run_number,
    })
}

fn require_open(conn: &Connection, partition: &str, run_number: u64) -> Result<RunRow> {
    let run = require_run(conn, partition, run_number)?;
    if run.status != RunStatus::Open {
        return Err(StoreError::RunClosed {
            partition: partition.to_owned(),
            run_number,
        });
    }
    Ok(run)
}

fn next_record_id(tx: &Transaction<'_>, run_id: i64) -> Result<u64> {
    let id: i64 = tx
        .prepare_cached("UPDATE runs SET next_record_id = next_record_id + 1 WHERE id = ?1 RETURNING next_record_id - 1")?
        .query_row([run_id], |r| r.get(0))?;
    Ok(id as u64)
}

fn insert_blobs(tx: &Transaction<'_>, comment: &NewComment, blobs: &[Vec<u8>]) -> Result<()> {
    let mut stmt = tx.prepare_cached(
        "INSERT OR IGNORE INTO blobs (digest, filename, media_type, data) VALUES (?1, ?2, ?3, ?4)",
    )?;
    for (a, data) in comment.attachments.iter().zip(blobs) {
        stmt.execute(params![a.digest, a.filename, a.media_type, data])?;
    }
    Ok(())
}

fn ensure_partition(tx: &Transaction<'_>, partition: &str) -> Result<()> {
    tx.prepare_cached("INSERT OR IGNORE INTO partitions (name) VALUES (?1)")?
        .execute([partition])?;
    Ok(())
}

fn load_header(conn: &Connection, run_id: i64) -> Result<RunHeader> {
    let sql = format!("SELECT {HEADER_COLUMNS} FROM runs WHERE id = ?1");
    Ok(conn.prepare_cached(&sql)?.query_row([run_id], header_from_row)?)
}

fn load_detail(conn: &Connection, run_id: i64) -> Result<RunDetail> {
    let header = load_header(conn, run_id)?;

    let mrs = conn
        .prepare_cached(
            "SELECT record_id, message_name, severity, application, text, timestamp, qualifiers \
             FROM mrs_messages WHERE run_id = ?1 ORDER BY timestamp, record_id",
        )?
        .query_map([run_id], |r| {
            Ok(StoredMrs {
                record_id: r.get::<_, i64>(0)? as u64,
                message: MrsMessage {
                    message_name: r.get(1)?,
                    severity: parse_col(r.get(2)?)?,
                    application: r.get(3)?,
                    text: r.get(4)?,
                    timestamp: ts(r.get(5)?)?,
                    qualifiers: from_json(&r.get::<_, String>(6)?)?,
                },
            })
        })?
        .collect::<rusqlite::Result<Vec<_>>>()?;

    let mut is: Vec<StoredIs> = Vec::new();
    let mut last_object = None;
    let mut stmt = conn.prepare_cached(
        "SELECT o.id, o.record_id, o.server, o.object_name, o.class_name, o.timestamp, \
                a.name, a.tag, a.int_value, a.float_value, a.str_value, a.list_json \
         FROM is_objects o LEFT JOIN is_attributes a ON a.object_id = o.id \
         WHERE o.run_id = ?1 ORDER BY o.timestamp, o.record_id, a.position",
    )?;
    let mut rows = stmt.query([run_id])?;
    while let Some(r) = rows.next()? {
        let object_id: i64 = r.get(0)?;
        if last_object != Some(object_id) {
            last_object = Some(object_id);
            is.push(StoredIs {
                record_id: r.get::<_, i64>(1)? as u64,
                info: IsInfo {
                    server: r.get(2)?,
                    object_name: r.get(3)?,
                    class_name: r.get(4)?,
                    attributes: Vec::new(),
                    timestamp: ts(r.get(5)?)?,
                },
            });
        }
        if let Some(name) = r.get::<_, Option<String>>(6)? {
            let value = value_from_row(r, 7)?;
            is.last_mut()
                .expect("object pushed above")
                .info
                .attributes
                .push(Attribute { name, value });
        }
    }

    let mut comments: Vec<Comment> = Vec::new();
    let mut last_comment = None;
    let mut stmt = conn.prepare_cached(
        "SELECT c.id, c.comment_id, c.author, c.created_at, c.text, c.origin, \
                a.filename, a.media_type, a.size_bytes, a.digest \
         FROM comments c LEFT JOIN attachments a ON a.comment_row = c.id \
         WHERE c.run_id = ?1 ORDER BY c.comment_id, a.position",
    )?;
    let mut rows = stmt.query([run_id])?;
    while let Some(r) = rows.next()? {
        let row_id: i64 = r.get(0)?;
        if last_comment != Some(row_id) {
            last_comment = Some(row_id);
            comments.push(Comment {
                comment_id: r.get::<_, i64>(1)? as u64,
                author: r.get(2)?,
                created_at: ts(r.get(3)?)?,
                text: r.get(4)?,
                origin: parse_col(r.get(5)?)?,
                attachments: Vec::new(),
            });
        }
        if let Some(filename) = r.get::<_, Option<String>>(6)? {
            comments.last_mut().expect("comment pushed above").attachments.push(Attachment {
                filename,
                media_type: r.get(7)?,
                size_bytes: r.get::<_, i64>(8)? as u64,
                digest: r.get(9)?,
            });
        }
    }

    Ok(RunDetail {
        header,
        mrs,
        is,
        comments,
    })
}

fn update_header(tx: &Transaction<'_>, run_id: i64, h: &RunHeader) -> Result<()> {
    tx.prepare_cached("UPDATE runs SET status = ?2, num_events = ?3, end_time = ?4 WHERE id = ?1")?
        .execute(params![
            run_id,
            h.status.as_str(),
            to_i64(h.num_events),
            h.end_time.map(Timestamp::as_millis)
        ])?;
    Ok(())
}

impl RelationalStore {
    pub fn create(root: &Path) -> Result<Self> {
        match std::fs::metadata(root) {
            Ok(m) if m.is_dir() || m.len() > 0 => return Err(StoreError::AlreadyExists(root.to_owned())),
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                if let Some(parent) = root.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(|e| map_io_create(root, e))?;
                }
            }
            Err(e) => return Err(map_io_create(root, e)),
        }
        let mut conn = Connection::open(root).map_err(|e| match e {
            rusqlite::Error::SqliteFailure(f, _) if f.code == rusqlite::ErrorCode::CannotOpen => {
                StoreError::PermissionDenied(root.display().to_string())
            }
            other => StoreError::Sql(other),
        })?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        let tx = conn.transaction()?;
        tx.execute_batch(SCHEMA_SQL)?;
        tx.execute(
            "INSERT INTO meta (key, value) VALUES ('format', ?1), ('version', ?2)",
            params![FORMAT, REPOSITORY_VERSION.to_string()],
        )?;
        tx.commit()?;
        drop(conn);
        Self::open(root, OpenOptions::default())
    }

    pub fn open(root: &Path, options: OpenOptions) -> Result<Self> {
        if !root.is_file() {
            return Err(StoreError::NoRepository(root.to_owned()));
        }
        let flags = if options.writable {
            OpenFlags::SQLITE_OPEN_READ_WRITE | OpenFlags::SQLITE_OPEN_NO_MUTEX
        } else {
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX
        };
        let conn = Connection::open_with_flags(root, flags)?;
        conn.busy_timeout(Duration::from_secs(10))?;
        let meta = conn
            .query_row("SELECT value FROM meta WHERE key = 'format'", [], |r| r.get::<_, String>(0))
            .optional()
            .and_then(|format| {
                let version = conn
                    .query_row("SELECT value FROM meta WHERE key = 'version'", [], |r| r.get::<_, String>(0))
                    .optional()?;
                Ok((format, version))
            });
        match meta {
            Ok((Some(format), Some(version))) => {
                if format != FORMAT || version != REPOSITORY_VERSION.to_string() {
                    return Err(StoreError::VersionMismatch {
                        found: format!("{format} v{version}"),
                        expected: REPOSITORY_VERSION,
                    });
                }
            }
            Ok(_) | Err(_) => return Err(StoreError::NoRepository(root.to_owned())),
        }
        if options.writable {
            conn.pragma_update(None, "journal_mode", "WAL")?;
            conn.pragma_update(None, "synchronous", if options.durable { "FULL" } else { "NORMAL" })?;
        }
        conn.pragma_update(None, "foreign_keys", "ON")?;
        Ok(RelationalStore {
            root: root.to_owned(),
            writable: options.writable,
            conn: Mutex::new(conn),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` in an immediate write transaction, committing on success.
    fn write<T>(&self, f: impl FnOnce(&Transaction<'_>) -> Result<T>) -> Result<T> {
        if !self.writable {
            return Err(StoreError::ReadOnly);
        }
        let mut conn = self.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let out = f(&tx)?;
        tx.commit()?;
        Ok(out)
    }

    /// Number of rows in `table`; used by integrity checks and tests.
    pub fn row_count(&self, table: &str) -> Result<u64> {
        let known = [
            "meta", "partitions", "runs", "mrs_messages", "is_objects", "is_attributes", "comments",
            "blobs", "attachments", "orphan_records", "users",
        ];
        if !known.contains(&table) {
            return Err(StoreError::Invalid(format!("unknown table {table:?}")));
        }
        let n: i64 = self
            .lock()
            .query_row(&format!("SELECT count(*) FROM {table}"), [], |r| r.get(0))?;
        Ok(n as u64)
    }

    /// Rows violating a foreign key, as reported by `PRAGMA foreign_key_check`.
    pub fn foreign_key_violations(&self) -> Result<u64> {
        let conn = self.lock();
        let mut stmt = conn.prepare("PRAGMA foreign_key_check")?;
        let mut rows = stmt.query([])?;
        let mut n = 0;
        while rows.next()?.is_some() {
            n += 1;
        }
        Ok(n)
    }

    fn close_with(
        &self,
        partition: &str,
        run_number: u64,
        close: impl FnOnce(&Connection, i64) -> Result<RunHeader>,
    ) -> Result<RunHeader> {
        self.write(|tx| {
            let run = require_run(tx, partition, run_number)?;
            let header = close(tx, run.id)?;
            update_header(tx, run.id, &header)?;
            Ok(header)
        })
    }
}

impl Backend for RelationalStore {
    fn id(&self) -> BackendId {
        BackendId::RelationalStore
    }

    fn root(&self) -> &Path {
        &self.root
    }

    fn writable(&self) -> bool {
        self.writable
    }

    fn begin_run(&self, header: &RunHeader) -> Result<()> {
        check_new_header(header)?;
        self.write(|tx| {
            if find_run(tx, &header.partition, header.run_number)?.is_some() {
                return Err(StoreError::DuplicateRun {
                    partition: header.partition.clone(),
                    run_number: header.run_number,
                });
            }
            let open: Option<i64> = tx
                .prepare_cached("SELECT run_number FROM runs WHERE partition = ?1 AND status = 'Open'")?
                .query_row([&header.partition], |r| r.get(0))
                .optional()?;
            if let Some(open_run) = open {
                return Err(StoreError::AlreadyOpen {
                    partition: header.partition.clone(),
                    open_run: open_run as u64,
                });
            }
            ensure_partition(tx, &header.partition)?;
            tx.prepare_cached(
                "INSERT INTO runs (partition, run_number, start_time, end_time, status, num_events, \
                 max_events, trigger_type, beam_type, beam_type_folded, detector_mask) \
                 VALUES (?1, ?2, ?3, NULL, 'Open', ?4, ?5, ?6, ?7, ?8, ?9)",
            )?
            .execute(params![
                header.partition,
                to_i64(header.run_number),
                header.start_time.as_millis(),
                to_i64(header.num_events),
                to_i64(header.max_events),
                header.trigger_type.as_str(),
                header.beam_type,
                fold_case(&header.beam_type),
                header.detector_mask.0 as i64,
            ])?;
            Ok(())
        })
    }

    fn end_run(
        &self,
        partition: &str,
        run_number: u64,
        status: ClosedStatus,
        num_events: u64,
        end_time: Timestamp,
    ) -> Result<RunHeader> {
        self.close_with(partition, run_number, |conn, run_id| {
            close_header(load_header(conn, run_id)?, status, num_events, end_time)
        })
    }

    fn append_mrs(&self, partition: &str, run_number: u64, message: &MrsMessage) -> Result<u64> {
        self.write(|tx| {
            let run = require_open(tx, partition, run_number)?;
            let id = next_record_id(tx, run.id)?;
            tx.prepare_cached(
                "INSERT INTO mrs_messages (run_id, record_id, message_name, severity, application, \
                 text, timestamp, qualifiers) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            )?
            .execute(params![
                run.id,
                to_i64(id),
                message.message_name,
                message.severity.as_str(),
                message.application,
                message.text,
                message.timestamp.as_millis(),
                json(&message.qualifiers),
            ])?;
            Ok(id)
        })
    }

    fn append_is(&self, partition: &str, run_number: u64, info: &IsInfo) -> Result<u64> {
        check_is(info)?;
        self.write(|tx| {
            let run = require_open(tx, partition, run_number)?;
            let id = next_record_id(tx, run.id)?;
            let object_id: i64 = tx
                .prepare_cached(
                    "INSERT INTO is_objects (run_id, record_id, server, object_name, class_name, timestamp) \
                     VALUES (?1, ?2, ?3, ?4, ?5, ?6) RETURNING id",
                )?
                .query_row(
                    params![
                        run.id,
                        to_i64(id),
                        info.server,
                        info.object_name,
                        info.class_name,
                        info.timestamp.as_millis()
                    ],
                    |r| r.get(0),
                )?;
            let mut stmt = tx.prepare_cached(
                "INSERT INTO is_attributes (object_id, position, name, tag, int_value, float_value, \
                 str_value, list_json) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            )?;
            for (pos, a) in info.attributes.iter().enumerate() {
                let (i, f, s, l) = value_columns(&a.value);
                stmt.execute(params![
                    object_id,
                    pos as i64,
                    a.name,
                    a.value.scalar_type().as_str(),
                    i,
                    f,
                    s,
                    l
                ])?;
            }
            Ok(id)
        })
    }

    fn append_comment(
        &self,
        partition: &str,
        run_number: u64,
        comment: &NewComment,
        blobs: &[Vec<u8>],
    ) -> Result<u64> {
        verify_blobs(comment, blobs)?;
        self.write(|tx| {
            let run = require_run(tx, partition, run_number)?;
            let id: i64 = tx
                .prepare_cached(
                    "UPDATE runs SET next_comment_id = next_comment_id + 1 WHERE id = ?1 \
                     RETURNING next_comment_id - 1",
                )?
                .query_row([run.id], |r| r.get(0))?;
            insert_blobs(tx, comment, blobs)?;
            let row: i64 = tx
                .prepare_cached(
                    "INSERT INTO comments (run_id, comment_id, author, created_at, text, origin) \
                     VALUES (?1, ?2, ?3, ?4, ?5, ?6) RETURNING id",
                )?
                .query_row(
                    params![
                        run.id,
                        id,
                        comment.author,
                        comment.created_at.as_millis(),
                        comment.text,
                        comment.origin.as_str()
                    ],
                    |r| r.get(0),
                )?;
            let mut stmt = tx.prepare_cached(
                "INSERT INTO attachments (comment_row, position, filename, media_type, size_bytes, digest) \
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            )?;
            for (pos, a) in comment.attachments.iter().enumerate() {
                stmt.execute(params![
                    row,
                    pos as i64,
                    a.filename,
                    a.media_type,
                    to_i64(a.size_bytes),
                    a.digest
                ])?;
            }
            Ok(id as u64)
        })
    }

    fn append_orphan(&self, partition: &str, payload: &OrphanPayload, blobs: &[Vec<u8>]) -> Result<u64> {
        check_partition(partition)?;
        match payload {
            OrphanPayload::Comment(c) => verify_blobs(c, blobs)?,
            OrphanPayload::Is(info) => check_is(info)?,
            OrphanPayload::Mrs(_) => {}
        }
        self.write(|tx| {
            ensure_partition(tx, partition)?;
            if let OrphanPayload::Comment(c) = payload {
                insert_blobs(tx, c, blobs)?;
            }
            let id: i64 = tx
                .prepare_cached(
                    "INSERT INTO orphan_records (partition, orphan_id, body) \
                     SELECT ?1, coalesce(max(orphan_id), 0) + 1, ?2 FROM orphan_records WHERE partition = ?1 \
                     RETURNING orphan_id",
                )?
                .query_row(params![partition, json(payload)], |r| r.get(0))?;
            Ok(id as u64)
        })
    }

    fn force_close(&self, partition: &str, run_number: u64) -> Result<RunHeader> {
        self.close_with(partition, run_number, |conn, run_id| {
            let detail = load_detail(conn, run_id)?;
            let end = last_activity(&detail);
            let events = detail.header.num_events;
            close_header(detail.header, ClosedStatus::Bad, events, end)
        })
    }

    fn open_run(&self, partition: &str) -> Result<Option<u64>> {
        let n: Option<i64> = self
            .lock()
            .prepare_cached("SELECT run_number FROM runs WHERE partition = ?1 AND status = 'Open'")?
            .query_row([partition], |r| r.get(0))
            .optional()?;
        Ok(n.map(|n| n as u64))
    }

    fn partitions(&self) -> Result<Vec<String>> {
        let conn = self.lock();
        let mut stmt = conn.prepare_cached("SELECT name FROM partitions ORDER BY name")?;
        let names = stmt.query_map([], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
        Ok(names)
    }

    fn list_run_headers(&self, partition: Option<&str>) -> Result<Vec<RunHeader>> {
        let conn = self.lock();
        let sql = format!(
            "SELECT {HEADER_COLUMNS} FROM runs WHERE ?1 IS NULL OR partition = ?1 \
             ORDER BY partition, run_number"
        );
        let mut stmt = conn.prepare_cached(&sql)?;
        let headers = stmt
            .query_map([partition], header_from_row)?
            .collect::<rusqlite::Result<_>>()?;
        Ok(headers)
    }

    fn get_run_detail(&self, partition: &str, run_number: u64) -> Result<RunDetail> {
        let mut conn = self.lock();
        // A deferred transaction gives the multi-statement read one snapshot.
        let tx = conn.transaction()?;
        let run = require_run(&tx, partition, run_number)?;
        load_detail(&tx, run.id)
    }

    fn orphans(&self, partition: &str) -> Result<Vec<OrphanRecord>> {
        let conn = self.lock();
        let mut stmt = conn.prepare_cached(
            "SELECT orphan_id, body FROM orphan_records WHERE partition = ?1 ORDER BY orphan_id",
        )?;
        let out = stmt
            .query_map([partition], |r| {
                Ok(OrphanRecord {
                    orphan_id: r.get::<_, i64>(0)? as u64,
                    payload: from_json(&r.get::<_, String>(1)?)?,
                })
            })?
            .collect::<rusqlite::Result<_>>()?;
        Ok(out)
    }

    fn get_attachment(&self, digest: &str) -> Result<(Attachment, Vec<u8>)> {
        self.lock()
            .prepare_cached("SELECT filename, media_type, data FROM blobs WHERE digest = ?1")?
            .query_row([digest], |r| {
                let data: Vec<u8> = r.get(2)?;
                Ok((
                    Attachment {
                        filename: r.get(0)?,
                        media_type: r.get(1)?,
                        size_bytes: data.len() as u64,
                        digest: digest.to_owned(),
                    },
                    data,
                ))
            })
            .optional()?
            .ok_or_else(|| StoreError::UnknownAttachment(digest.to_owned()))
    }

    fn blob_digests(&self) -> Result<Vec<String>> {
        let conn = self.lock();
        let mut stmt = conn.prepare_cached("SELECT digest FROM blobs ORDER BY digest")?;
        let out = stmt.query_map([], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
        Ok(out)
    }

    fn put_user(&self, user: &User) -> Result<()> {
        self.write(|tx| {
            tx.prepare_cached(
                "INSERT INTO users (username, password_hash, role) VALUES (?1, ?2, ?3) \
                 ON CONFLICT (username) DO UPDATE SET password_hash = excluded.password_hash, role = excluded.role",
            )?
            .execute(params![user.username, user.password_hash, user.role.as_str()])?;
            Ok(())
        })
    }

    fn get_user(&self, username: &str) -> Result<Option<User>> {
        Ok(self
            .lock()
            .prepare_cached("SELECT username, password_hash, role FROM users WHERE username = ?1")?
            .query_row([username], user_from_row)
            .optional()?)
    }

    fn list_users(&self) -> Result<Vec<User>> {
        let conn = self.lock();
        let mut stmt =
            conn.prepare_cached("SELECT username, password_hash, role FROM users ORDER BY username")?;
        let out = stmt.query_map([], user_from_row)?.collect::<rusqlite::Result<_>>()?;
        Ok(out)
    }

    fn find_runs(&self, criteria: &SearchCriteria, include_open: bool) -> Result<Vec<RunHeader>> {
        criteria
            .validate()
            .map_err(|e| QueryError::InvalidCriteria(e.to_string()))?;
        let mut sql = format!("SELECT {HEADER_COLUMNS} FROM runs WHERE 1");
        let mut args: Vec<rusqlite::types::Value> = Vec::new();
        let mut bind = |sql: &mut String, clause: &str, v: rusqlite::types::Value| {
            args.push(v);
            sql.push_str(&clause.replace('?', &format!("?{}", args.len())));
        };
        if !include_open {
            sql.push_str(" AND status <> 'Open'");
        }
        if let Some(s) = criteria.status {
            bind(&mut sql, " AND status = ?", RunStatus::from(s).as_str().to_owned().into());
        }
        if let Some(bound) = criteria.max_events_at_most {
            bind(&mut sql, " AND max_events <= ?", to_i64(bound).into());
        }
        if let Some(t) = criteria.start_from {
            bind(&mut sql, " AND start_time >= ?", t.as_millis().into());
        }
        if let Some(t) = criteria.start_to {
            bind(&mut sql, " AND start_time <= ?", t.as_millis().into());
        }
        if let Some(beam) = &criteria.beam_type {
            bind(&mut sql, " AND beam_type_folded = ?", fold_case(beam).into());
        }
        if let Some(trigger) = &criteria.trigger_type {
            bind(&mut sql, " AND trigger_type = ?", trigger.as_str().to_owned().into());
        }
        let key = match criteria.sort_key {
            SortKey::RunNumber => "run_number",
            SortKey::StartTime => "start_time",
            SortKey::NumEvents => "num_events",
        };
        let dir = match criteria.sort_dir {
            SortDir::Asc => "ASC",
            SortDir::Desc => "DESC",
        };
        sql.push_str(&format!(" ORDER BY {key} {dir}, partition ASC, run_number ASC"));
        let conn = self.lock();
        let mut stmt = conn.prepare_cached(&sql)?;
        let out = stmt
            .query_map(rusqlite::params_from_iter(args), header_from_row)?
            .collect::<rusqlite::Result<_>>()?;
        Ok(out)
    }

    fn find_is_instances(&self, query: &IsQuery) -> Result<Vec<IsMatch>> {
        query.validate()?;
        let mut sql = String::from(
            "SELECT r.partition, r.run_number, o.object_name, o.timestamp, o.record_id, \
                    a.tag, a.int_value, a.float_value, a.str_value, a.list_json \
             FROM is_attributes a \
             JOIN is_objects o ON a.object_id = o.id \
             JOIN runs r ON o.run_id = r.id \
             WHERE o.class_name = ?1 AND a.name = ?2",
        );
        let mut args: Vec<rusqlite::types::Value> =
            vec![query.class_name.clone().into(), query.parameter_name.clone().into()];
        if let Some(p) = &query.partition {
            args.push(p.clone().into());
            sql.push_str(&format!(" AND r.partition = ?{}", args.len()));
        }
        // `contains` is evaluated in Rust so embedded NULs behave like
        // ordinary characters.
        let mut residual = None;
        if let Some(pred) = &query.predicate {
            args.push(pred.value.scalar_type().as_str().to_owned().into());
            sql.push_str(&format!(" AND a.tag = ?{}", args.len()));
            let (i, f, s, l) = value_columns(&pred.value);
            let (column, value): (&str, rusqlite::types::Value) = match (i, f, s, l) {
                (Some(i), ..) => ("a.int_value", i.into()),
                (_, Some(f), ..) => ("a.float_value", f.into()),
                (_, _, Some(s), _) => ("a.str_value", s.into()),
                (.., Some(l)) => ("a.list_json", l.into()),
                _ => unreachable!("every scalar fills one column"),
            };
            let op = match pred.op {
                PredicateOp::Eq => Some("="),
                PredicateOp::Lt => Some("<"),
                PredicateOp::Gt => Some(">"),
                PredicateOp::Contains => None,
            };
            match op {
                Some(op) => {
                    args.push(value);
                    sql.push_str(&format!(" AND {column} {op} ?{}", args.len()));
                }
                None => residual = Some(pred),
            }
        }
        sql.push_str(" ORDER BY r.partition, r.run_number, o.timestamp, o.record_id");
        let conn = self.lock();
        let mut stmt = conn.prepare_cached(&sql)?;
        let rows = stmt
            .query_map(rusqlite::params_from_iter(args), |r| {
                Ok(IsMatch {
                    partition: r.get(0)?,
                    run_number: r.get::<_, i64>(1)? as u64,
                    object_name: r.get(2)?,
                    timestamp: ts(r.get(3)?)?,
                    record_id: r.get::<_, i64>(4)? as u64,
                    value: Attribute {
                        name: query.parameter_name.clone(),
                        value: value_from_row(r, 5)?,
                    },
                })
            })?
            .collect::<rusqlite::Result<Vec<_>>>()?;
        Ok(match residual {
            Some(p) => rows.into_iter().filter(|m| p.matches(&m.value.value)).collect(),
            None => rows,
        })
    }
}

fn user_from_row(r: &Row<'_>) -> rusqlite::Result<User> {
    Ok(User {
        username: r.get(0)?,
        password_hash: r.get(1)?,
        role: parse_col::<Role>(r.get(2)?)?,
    })
}
