use std::collections::BTreeSet;
use std::io::Write;

use base64::Engine as _;
use serde::Serialize;

use super::{Backend, OrphanPayload, Result};
use crate::model::{Comment, IsInfo, MrsMessage, RunHeader};

/// First line of every canonical export.
pub const EXPORT_HEADER: &str = "obk-export v1";

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line<'a> {
    Partition {
        name: &'a str,
    },
    Run {
        header: &'a RunHeader,
    },
    Mrs {
        partition: &'a str,
        run_number: u64,
        record_id: u64,
        message: &'a MrsMessage,
    },
    Is {
        partition: &'a str,
        run_number: u64,
        record_id: u64,
        info: &'a IsInfo,
    },
    Comment {
        partition: &'a str,
        run_number: u64,
        comment: &'a Comment,
    },
    Orphan {
        partition: &'a str,
        orphan_id: u64,
        #[serde(flatten)]
        payload: &'a OrphanPayload,
    },
    Blob {
        digest: &'a str,
        size_bytes: u64,
        content: String,
    },
}

fn emit(out: &mut dyn Write, line: &Line<'_>) -> Result<()> {
    serde_json::to_writer(&mut *out, line).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Writes a deterministic serialization of the whole repository: the
/// `obk-export v1` line, then per partition (ascending) its runs by number
/// with records ordered by `(timestamp, record_id)`, comments and orphans,
/// and finally every attachment blob by digest. User accounts are not part
/// of the export.
///
/// Only the storage contract is used, so two backends holding the same data
/// produce identical bytes.
pub fn export_canonical(backend: &dyn Backend, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "{EXPORT_HEADER}")?;
    let mut digests = BTreeSet::new();
    for partition in backend.partitions()? {
        emit(out, &Line::Partition { name: &partition })?;
        for header in backend.list_run_headers(Some(&partition))? {
            let detail = backend.get_run_detail(&partition, header.run_number)?;
            let run_number = header.run_number;
            emit(out, &Line::Run { header: &detail.header })?;
            for r in &detail.mrs {
                emit(
                    out,
                    &Line::Mrs {
                        partition: &partition,
                        run_number,
                        record_id: r.record_id,
                        message: &r.message,
                    },
                )?;
            }
            for r in &detail.is {
                emit(
                    out,
                    &Line::Is {
                        partition: &partition,
                        run_number,
                        record_id: r.record_id,
                        info: &r.info,
                    },
                )?;
            }
            for c in &detail.comments {
                digests.extend(c.attachments.iter().map(|a| a.digest.clone()));
                emit(
                    out,
                    &Line::Comment {
                        partition: &partition,
                        run_number,
                        comment: c,
                    },
                )?;
            }
        }
        for o in backend.orphans(&partition)? {
            if let OrphanPayload::Comment(c) = &o.payload {
                digests.extend(c.attachments.iter().map(|a| a.digest.clone()));
            }
            emit(
                out,
                &Line::Orphan {
                    partition: &partition,
                    orphan_id: o.orphan_id,
                    payload: &o.payload,
                },
            )?;
        }
    }
    digests.extend(backend.blob_digests()?);
    for digest in &digests {
        let (_, data) = backend.get_attachment(digest)?;
        emit(
            out,
            &Line::Blob {
                digest,
                size_bytes: data.len() as u64,
                content: base64::engine::general_purpose::STANDARD.encode(&data),
            },
        )?;
    }
    Ok(())
}

pub fn export_canonical_string(backend: &dyn Backend) -> Result<String> {
    let mut buf = Vec::new();
    export_canonical(backend, &mut buf)?;
    Ok(String::from_utf8(buf).expect("export is UTF-8 JSON"))
}
