//! A small deterministic repository used by the API tests and for trying
//! out the service by hand.

use obk_core::model::{
    Attachment, Attribute, ClosedStatus, CommentOrigin, DetectorMask, IsInfo, MrsMessage, NewComment, Role,
    RunHeader, Scalar, Severity, Timestamp, TriggerType, User,
};
use obk_core::storage::{Backend, StoreError};

use crate::auth::hash_password;
use crate::config::HashParams;

/// Accounts created by [`populate`]: `(username, password, role)`.
pub const USERS: [(&str, &str, Role); 3] = [
    ("admin", "admin-secret", Role::Admin),
    ("writer", "writer-secret", Role::Writer),
    ("reader", "reader-secret", Role::Reader),
];

/// 2024-03-01T08:00:00Z
pub const EPOCH_MS: i64 = 1_709_280_000_000;

const HOUR: i64 = 3_600_000;

pub const NOTE_TXT: &[u8] = b"beam spot drifted by 0.2 mm\n";
pub const SCOPE_PNG: &[u8] = &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 0, 0, 0, 0x0d, b'I', b'H', b'D', b'R'];
pub const DUMP_BIN: &[u8] = &[0, 1, 2, 3, 0xfe, 0xff, 0x10, 0x20];

fn at(hours: i64) -> Timestamp {
    Timestamp::from_millis(EPOCH_MS + hours * HOUR).expect("fixture time in range")
}

struct Run {
    partition: &'static str,
    number: u64,
    start_h: i64,
    trigger: &'static str,
    beam: &'static str,
    max_events: u64,
    /// `None` leaves the run open.
    end: Option<(ClosedStatus, u64)>,
}

const fn run(
    partition: &'static str,
    number: u64,
    start_h: i64,
    trigger: &'static str,
    beam: &'static str,
    max_events: u64,
    end: Option<(ClosedStatus, u64)>,
) -> Run {
    Run {
        partition,
        number,
        start_h,
        trigger,
        beam,
        max_events,
        end,
    }
}

const RUNS: [Run; 12] = [
    run("TB", 1, 0, "Cosmic", "none", 0, Some((ClosedStatus::Good, 1_200))),
    run("TB", 2, 3, "Physics", "muons", 50_000, Some((ClosedStatus::Good, 50_000))),
    run("TB", 3, 6, "Physics", "electrons", 20_000, Some((ClosedStatus::Bad, 731))),
    run("TB", 4, 24, "Calibration", "none", 1_000, Some((ClosedStatus::Good, 1_000))),
    run("TB", 5, 27, "Physics", "muons", 100_000, Some((ClosedStatus::Bad, 15_400))),
    run("TB", 6, 48, "Physics", "pions", 80_000, Some((ClosedStatus::Good, 80_000))),
    run("TB", 7, 72, "LaserScan", "none", 5_000, Some((ClosedStatus::Good, 4_990))),
    run("TB", 8, 96, "Physics", "muons", 30_000, None),
    run("LAr", 1, 1, "Calibration", "none", 2_000, Some((ClosedStatus::Good, 2_000))),
    run("LAr", 2, 25, "Cosmic", "none", 0, Some((ClosedStatus::Bad, 12))),
    run("LAr", 3, 50, "Physics", "electrons", 40_000, Some((ClosedStatus::Good, 39_870))),
    run("LAr", 4, 74, "Calibration", "none", 2_000, Some((ClosedStatus::Good, 2_000))),
];

/// Fills an empty repository with twelve runs in partitions `TB` and `LAr`,
/// some IS and MRS records, comments with attachments and the [`USERS`].
pub fn populate(store: &dyn Backend, hash: HashParams) -> Result<(), StoreError> {
    for (username, password, role) in USERS {
        let password_hash = hash_password(password, hash).map_err(|e| StoreError::Invalid(e.to_string()))?;
        store.put_user(&User {
            username: username.to_owned(),
            password_hash,
            role,
        })?;
    }
    for (i, r) in RUNS.iter().enumerate() {
        let start = at(r.start_h);
        let header = RunHeader::open(
            r.partition,
            r.number,
            start,
            r.max_events,
            TriggerType::new(r.trigger),
            r.beam,
            DetectorMask(0x0f0 | (i as u32 & 0x7)),
        );
        store.begin_run(&header)?;
        let t = |minutes: i64| Timestamp::from_millis(start.as_millis() + minutes * 60_000).expect("in range");
        store.append_mrs(
            r.partition,
            r.number,
            &MrsMessage {
                message_name: "RC::Started".into(),
                severity: Severity::Information,
                application: "RootController".into(),
                text: format!("run {} started", r.number),
                timestamp: t(0),
                qualifiers: vec!["rc".into()],
            },
        )?;
        if r.end.is_some_and(|(s, _)| s == ClosedStatus::Bad) {
            store.append_mrs(
                r.partition,
                r.number,
                &MrsMessage {
                    message_name: "ROS::Timeout".into(),
                    severity: Severity::Error,
                    application: "ROS-1".into(),
                    text: "readout timeout on channel 3".into(),
                    timestamp: t(20),
                    qualifiers: vec!["ros".into(), "timeout".into()],
                },
            )?;
        }
        for k in 0..2i64 {
            store.append_is(
                r.partition,
                r.number,
                &IsInfo {
                    server: "RunParams".into(),
                    object_name: "Beam.Energy".into(),
                    class_name: "BeamInfo".into(),
                    attributes: vec![
                        Attribute::new("energy_gev", Scalar::Float(if r.beam == "none" { 0.0 } else { 120.0 + k as f64 * 60.0 })),
                        Attribute::new("particle", Scalar::Str(r.beam.into())),
                        Attribute::new("spills", Scalar::Int(k * 40 + r.number as i64)),
                    ],
                    timestamp: t(5 + k * 30),
                },
            )?;
        }
        if r.partition == "TB" && r.number == 3 {
            let blobs = vec![NOTE_TXT.to_vec(), SCOPE_PNG.to_vec()];
            store.append_comment(
                r.partition,
                r.number,
                &NewComment {
                    author: "shifter".into(),
                    created_at: t(40),
                    text: "Beam lost after 700 events; see scope capture.".into(),
                    origin: CommentOrigin::Online,
                    attachments: vec![
                        Attachment::describe("notes.txt", "text/plain", NOTE_TXT),
                        Attachment::describe("scope capture.png", "image/png", SCOPE_PNG),
                    ],
                },
                &blobs,
            )?;
            store.append_comment(
                r.partition,
                r.number,
                &NewComment {
                    author: "expert".into(),
                    created_at: t(55),
                    text: "Raw dump attached.".into(),
                    origin: CommentOrigin::Online,
                    attachments: vec![Attachment::describe("dump.bin", "application/octet-stream", DUMP_BIN)],
                },
                &[DUMP_BIN.to_vec()],
            )?;
        }
        if let Some((status, events)) = r.end {
            store.end_run(r.partition, r.number, status, events, at(r.start_h + 2))?;
        }
    }
    Ok(())
}
