//! Behaviour every backend must share, exercised against all of them.

use tempfile::TempDir;

use super::*;
use crate::model::{
    Attachment, Attribute, CommentOrigin, DetectorMask, IsInfo, MrsMessage, NewComment, Role,
    RunHeader, RunStatus, Scalar, Severity, Timestamp, TriggerType, User,
};

pub(crate) struct Fixture {
    pub repo: Repository,
    _dir: TempDir,
}

pub(crate) fn fresh(backend: BackendId) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = match backend {
        BackendId::FileStore => dir.path().join("repo"),
        BackendId::RelationalStore => dir.path().join("repo.db"),
        BackendId::Memory => dir.path().to_owned(),
    };
    Fixture {
        repo: create_repository(backend, &root).unwrap(),
        _dir: dir,
    }
}

const ALL: [BackendId; 3] = [BackendId::Memory, BackendId::FileStore, BackendId::RelationalStore];

fn ts(ms: i64) -> Timestamp {
    Timestamp::from_millis(1_030_000_000_000 + ms).unwrap()
}

fn open_header(partition: &str, n: u64) -> RunHeader {
    RunHeader::open(partition, n, ts(n as i64 * 1000), 1000, TriggerType::Physics, "Muons", DetectorMask(3))
}

fn mrs(t: i64, text: &str) -> MrsMessage {
    MrsMessage {
        message_name: "RC::Transition".into(),
        severity: Severity::Warning,
        application: "rc".into(),
        text: text.into(),
        timestamp: ts(t),
        qualifiers: vec!["a".into(), "b c".into()],
    }
}

fn is(t: i64, energy: i64) -> IsInfo {
    IsInfo {
        server: "RunParams".into(),
        object_name: "RunParams.Beam".into(),
        class_name: "BeamInfo".into(),
        attributes: vec![
            Attribute::new("beam_energy", Scalar::Int(energy)),
            Attribute::new("label", Scalar::Str("x <&> y".into())),
        ],
        timestamp: ts(t),
    }
}

fn comment(text: &str, files: &[(&str, &[u8])]) -> (NewComment, Vec<Vec<u8>>) {
    let attachments = files
        .iter()
        .map(|(name, data)| Attachment::describe(*name, "text/plain", data))
        .collect();
    (
        NewComment {
            author: "shifter".into(),
            created_at: ts(5),
            text: text.into(),
            origin: CommentOrigin::Offline,
            attachments,
        },
        files.iter().map(|(_, d)| d.to_vec()).collect(),
    )
}

fn each(test: impl Fn(&dyn Backend)) {
    for id in ALL {
        let f = fresh(id);
        test(f.repo.backend());
    }
}

#[test]
fn begin_then_get_returns_open_header() {
    each(|b| {
        b.begin_run(&open_header("TB", 1)).unwrap();
        let d = b.get_run_detail("TB", 1).unwrap();
        assert_eq!(d.header, open_header("TB", 1), "{}", b.id());
        assert_eq!(b.open_run("TB").unwrap(), Some(1));
        assert_eq!(b.partitions().unwrap(), vec!["TB".to_owned()]);
    });
}

#[test]
fn duplicate_and_already_open() {
    each(|b| {
        b.begin_run(&open_header("TB", 1)).unwrap();
        assert!(matches!(b.begin_run(&open_header("TB", 1)), Err(StoreError::DuplicateRun { .. })));
        assert!(matches!(
            b.begin_run(&open_header("TB", 2)),
            Err(StoreError::AlreadyOpen { open_run: 1, .. })
        ));
        // Other partitions are independent.
        b.begin_run(&open_header("LAr", 2)).unwrap();
        b.end_run("TB", 1, ClosedStatus::Good, 10, ts(1500)).unwrap();
        assert!(matches!(b.begin_run(&open_header("TB", 1)), Err(StoreError::DuplicateRun { .. })));
        b.begin_run(&open_header("TB", 2)).unwrap();
    });
}

#[test]
fn end_run_errors() {
    each(|b| {
        assert!(matches!(
            b.end_run("TB", 1, ClosedStatus::Good, 1, ts(2000)),
            Err(StoreError::UnknownRun { .. })
        ));
        b.begin_run(&open_header("TB", 1)).unwrap();
        let h = b.end_run("TB", 1, ClosedStatus::Bad, 7, ts(2000)).unwrap();
        assert_eq!((h.status, h.num_events, h.end_time), (RunStatus::Bad, 7, Some(ts(2000))));
        assert!(matches!(
            b.end_run("TB", 1, ClosedStatus::Good, 1, ts(2000)),
            Err(StoreError::NotOpen { .. })
        ));
        assert_eq!(b.get_run_detail("TB", 1).unwrap().header, h);
        assert_eq!(b.open_run("TB").unwrap(), None);
    });
}

#[test]
fn end_before_start_is_rejected_and_run_stays_open() {
    each(|b| {
        b.begin_run(&open_header("TB", 1)).unwrap();
        assert!(matches!(
            b.end_run("TB", 1, ClosedStatus::Good, 1, ts(999)),
            Err(StoreError::Invalid(_))
        ));
        assert_eq!(b.open_run("TB").unwrap(), Some(1));
    });
}

#[test]
fn records_share_one_id_counter_and_sort_by_timestamp() {
    each(|b| {
        b.begin_run(&open_header("TB", 1)).unwrap();
        assert_eq!(b.append_mrs("TB", 1, &mrs(30, "late")).unwrap(), 1);
        assert_eq!(b.append_is("TB", 1, &is(20, 5)).unwrap(), 2);
        assert_eq!(b.append_mrs("TB", 1, &mrs(10, "early")).unwrap(), 3);
        assert_eq!(b.append_mrs("TB", 1, &mrs(10, "early too")).unwrap(), 4);
        let d = b.get_run_detail("TB", 1).unwrap();
        let ids: Vec<_> = d.mrs.iter().map(|r| r.record_id).collect();
        assert_eq!(ids, [3, 4, 1], "{}", b.id());
        assert_eq!(d.is[0].info, is(20, 5));
        assert_eq!(d.mrs[2].message, mrs(30, "late"));
    });
}

#[test]
fn appends_to_closed_or_unknown_runs_fail() {
    each(|b| {
        assert!(matches!(b.append_mrs("TB", 1, &mrs(1, "x")), Err(StoreError::UnknownRun { .. })));
        b.begin_run(&open_header("TB", 1)).unwrap();
        b.end_run("TB", 1, ClosedStatus::Good, 1, ts(2000)).unwrap();
        assert!(matches!(b.append_mrs("TB", 1, &mrs(1, "x")), Err(StoreError::RunClosed { .. })));
        assert!(matches!(b.append_is("TB", 1, &is(1, 1)), Err(StoreError::RunClosed { .. })));
        assert!(matches!(b.append_mrs("TB", 2, &mrs(1, "x")), Err(StoreError::UnknownRun { .. })));
    });
}

#[test]
fn duplicate_is_attribute_rejected() {
    each(|b| {
        b.begin_run(&open_header("TB", 1)).unwrap();
        let mut info = is(1, 1);
        info.attributes.push(Attribute::new("beam_energy", Scalar::Int(2)));
        assert!(matches!(b.append_is("TB", 1, &info), Err(StoreError::Invalid(_))));
        assert!(b.get_run_detail("TB", 1).unwrap().is.is_empty());
    });
}

#[test]
fn comments_on_open_and_closed_runs() {
    each(|b| {
        assert!(matches!(
            b.append_comment("TB", 1, &comment("x", &[]).0, &[]),
            Err(StoreError::UnknownRun { .. })
        ));
        b.begin_run(&open_header("TB", 1)).unwrap();
        let (c1, blobs1) = comment("online note", &[("a.txt", b"hello")]);
        assert_eq!(b.append_comment("TB", 1, &c1, &blobs1).unwrap(), 1);
        b.end_run("TB", 1, ClosedStatus::Good, 1, ts(2000)).unwrap();
        let (c2, _) = comment("after the fact", &[]);
        assert_eq!(b.append_comment("TB", 1, &c2, &[]).unwrap(), 2);
        assert_eq!(b.append_comment("TB", 1, &c2, &[]).unwrap(), 3);
        let d = b.get_run_detail("TB", 1).unwrap();
        let ids: Vec<_> = d.comments.iter().map(|c| c.comment_id).collect();
        assert_eq!(ids, [1, 2, 3]);
        assert_eq!(d.comments[0].attachments, c1.attachments);
        let (meta, data) = b.get_attachment(&c1.attachments[0].digest).unwrap();
        assert_eq!(data, b"hello");
        assert_eq!(meta, c1.attachments[0]);
        assert_eq!(b.blob_digests().unwrap(), vec![c1.attachments[0].digest.clone()]);
        assert_eq!(d.header.status, RunStatus::Good);
    });
}

#[test]
fn digest_mismatch_stores_nothing() {
    each(|b| {
        b.begin_run(&open_header("TB", 1)).unwrap();
        let (c, _) = comment("x", &[("a.txt", b"hello")]);
        assert!(matches!(
            b.append_comment("TB", 1, &c, &[b"HELLO".to_vec()]),
            Err(StoreError::DigestMismatch { .. })
        ));
        assert!(b.get_run_detail("TB", 1).unwrap().comments.is_empty());
        assert!(b.blob_digests().unwrap().is_empty());
        assert!(matches!(
            b.get_attachment(&c.attachments[0].digest),
            Err(StoreError::UnknownAttachment(_))
        ));
    });
}

#[test]
fn force_close_uses_last_activity() {
    each(|b| {
        b.begin_run(&open_header("TB", 1)).unwrap();
        b.append_mrs("TB", 1, &mrs(4000, "x")).unwrap();
        b.append_is("TB", 1, &is(3000, 1)).unwrap();
        let h = b.force_close("TB", 1).unwrap();
        assert_eq!(h.status, RunStatus::Bad);
        assert_eq!(h.end_time, Some(ts(4000)));
        assert_eq!(h.num_events, 0);
        assert_eq!(b.get_run_detail("TB", 1).unwrap().mrs.len(), 1);
        assert!(matches!(b.force_close("TB", 1), Err(StoreError::NotOpen { .. })));
        b.begin_run(&open_header("TB", 2)).unwrap();
        assert_eq!(b.force_close("TB", 2).unwrap().end_time, Some(ts(2000)));
    });
}

#[test]
fn orphans_are_numbered_per_partition() {
    each(|b| {
        let (c, blobs) = comment("orphan note", &[("o.txt", b"orphan")]);
        assert_eq!(b.append_orphan("TB", &OrphanPayload::Mrs(mrs(1, "x")), &[]).unwrap(), 1);
        assert_eq!(b.append_orphan("TB", &OrphanPayload::Comment(c.clone()), &blobs).unwrap(), 2);
        assert_eq!(b.append_orphan("LAr", &OrphanPayload::Is(is(1, 1)), &[]).unwrap(), 1);
        let o = b.orphans("TB").unwrap();
        assert_eq!(o.len(), 2);
        assert_eq!(o[1].payload, OrphanPayload::Comment(c.clone()));
        assert_eq!(b.get_attachment(&c.attachments[0].digest).unwrap().1, b"orphan");
        assert_eq!(b.partitions().unwrap(), vec!["LAr".to_owned(), "TB".to_owned()]);
        assert!(b.list_run_headers(None).unwrap().is_empty());
        assert!(b.orphans("nope").unwrap().is_empty());
    });
}

#[test]
fn users_round_trip() {
    each(|b| {
        let mut u = User {
            username: "ann".into(),
            password_hash: "$argon2id$x".into(),
            role: Role::Reader,
        };
        b.put_user(&u).unwrap();
        u.role = Role::Admin;
        b.put_user(&u).unwrap();
        b.put_user(&User {
            username: "al".into(),
            password_hash: "h".into(),
            role: Role::Writer,
        })
        .unwrap();
        assert_eq!(b.get_user("ann").unwrap(), Some(u));
        assert_eq!(b.get_user("bob").unwrap(), None);
        let names: Vec<_> = b.list_users().unwrap().into_iter().map(|u| u.username).collect();
        assert_eq!(names, ["al", "ann"]);
    });
}

#[test]
fn invalid_headers_rejected() {
    each(|b| {
        let mut h = open_header("TB", 0);
        assert!(matches!(b.begin_run(&h), Err(StoreError::Invalid(_))));
        h = open_header("../x", 1);
        assert!(matches!(b.begin_run(&h), Err(StoreError::Invalid(_))));
        h = open_header("TB", 1);
        h.status = RunStatus::Good;
        h.end_time = Some(ts(5000));
        assert!(matches!(b.begin_run(&h), Err(StoreError::Invalid(_))));
        assert!(b.partitions().unwrap().is_empty());
    });
}

fn populate(b: &dyn Backend) {
    for n in 1..=3 {
        b.begin_run(&open_header("TB", n)).unwrap();
        b.append_mrs("TB", n, &mrs(n as i64 * 1000 + 2, "line\nbreak\u{1}ctl")).unwrap();
        b.append_is("TB", n, &is(n as i64 * 1000 + 1, n as i64 * 50)).unwrap();
        let (c, blobs) = comment("note", &[("a.bin", &[0, 159, 146, 150][..])]);
        b.append_comment("TB", n, &c, &blobs).unwrap();
        if n < 3 {
            b.end_run("TB", n, ClosedStatus::Good, n * 10, ts(n as i64 * 1000 + 500)).unwrap();
        }
    }
    b.append_orphan("LAr", &OrphanPayload::Mrs(mrs(1, "orphan")), &[]).unwrap();
}

#[test]
fn exports_agree_across_backends() {
    let exports: Vec<_> = ALL
        .iter()
        .map(|&id| {
            let f = fresh(id);
            populate(f.repo.backend());
            export_canonical_string(f.repo.backend()).unwrap()
        })
        .collect();
    assert!(exports[0].starts_with("obk-export v1\n"));
    assert_eq!(exports[0], exports[1]);
    assert_eq!(exports[0], exports[2]);
}

#[test]
fn persistent_backends_survive_reopen() {
    for id in [BackendId::FileStore, BackendId::RelationalStore] {
        let f = fresh(id);
        populate(f.repo.backend());
        let before = export_canonical_string(f.repo.backend()).unwrap();
        let root = f.repo.root().to_owned();
        let reopened = Repository::open(&root, OpenOptions::default()).unwrap();
        assert_eq!(reopened.id(), id);
        assert_eq!(export_canonical_string(&*reopened).unwrap(), before);
        // Appends continue with the right ids after reopen.
        assert_eq!(reopened.append_mrs("TB", 3, &mrs(9000, "more")).unwrap(), 3);
        assert_eq!(reopened.open_run("TB").unwrap(), Some(3));

        let ro = Repository::open(&root, OpenOptions { writable: false, durable: false }).unwrap();
        assert!(matches!(ro.append_mrs("TB", 3, &mrs(1, "x")), Err(StoreError::ReadOnly)));
        assert_eq!(ro.get_run_detail("TB", 3).unwrap().mrs.len(), 2);
    }
}

#[test]
fn create_refuses_non_empty_root() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk"), b"x").unwrap();
    assert!(matches!(
        create_repository(BackendId::FileStore, dir.path()),
        Err(StoreError::AlreadyExists(_))
    ));
    assert!(matches!(
        create_repository(BackendId::RelationalStore, &dir.path().join("junk")),
        Err(StoreError::AlreadyExists(_))
    ));
    assert!(matches!(
        Repository::open(&dir.path().join("absent"), OpenOptions::default()),
        Err(StoreError::NoRepository(_))
    ));
}

#[test]
fn file_store_layout() {
    let f = fresh(BackendId::FileStore);
    let root = f.repo.root().to_owned();
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("obk-meta.json")).unwrap()).unwrap();
    assert_eq!(meta["version"], 1);
    assert_eq!(meta["partitions"], serde_json::json!([]));
    populate(f.repo.backend());
    for n in 1..=3 {
        let path = root.join("TB").join(format!("run_{n:010}.xml"));
        let text = std::fs::read_to_string(&path).unwrap();
        roxmltree::Document::parse(&text).expect("well-formed XML");
    }
    assert!(root.join("TB/run_0000000003.journal").exists());
    assert!(!root.join("TB/run_0000000001.journal").exists());
    let digest = crate::model::content_digest(&[0, 159, 146, 150]);
    assert!(root.join("TB/attachments").join(&digest).exists());
}

#[test]
fn file_store_version_mismatch() {
    let f = fresh(BackendId::FileStore);
    let root = f.repo.root().to_owned();
    std::fs::write(
        root.join("obk-meta.json"),
        br#"{"format":"obk-filestore","version":2,"partitions":[]}"#,
    )
    .unwrap();
    assert!(matches!(
        Repository::open(&root, OpenOptions::default()),
        Err(StoreError::VersionMismatch { .. })
    ));
}

#[test]
fn relational_foreign_keys_hold() {
    let dir = tempfile::tempdir().unwrap();
    let store = RelationalStore::create(&dir.path().join("r.db")).unwrap();
    populate(&store);
    assert_eq!(store.foreign_key_violations().unwrap(), 0);
    assert_eq!(store.row_count("is_attributes").unwrap(), 6);
    assert_eq!(store.row_count("is_objects").unwrap(), 3);
}

#[test]
fn file_store_shares_runs_between_handles() {
    // Two handles on one directory behave like two processes.
    let f = fresh(BackendId::FileStore);
    let root = f.repo.root().to_owned();
    let other = Repository::open(&root, OpenOptions::default()).unwrap();
    f.repo.begin_run(&open_header("TB", 1)).unwrap();
    assert_eq!(other.append_mrs("TB", 1, &mrs(1, "a")).unwrap(), 1);
    assert_eq!(f.repo.append_mrs("TB", 1, &mrs(2, "b")).unwrap(), 2);
    assert_eq!(other.append_is("TB", 1, &is(3, 1)).unwrap(), 3);
    other.end_run("TB", 1, ClosedStatus::Good, 3, ts(5000)).unwrap();
    assert!(matches!(f.repo.append_mrs("TB", 1, &mrs(2, "c")), Err(StoreError::RunClosed { .. })));
    assert_eq!(f.repo.get_run_detail("TB", 1).unwrap().mrs.len(), 2);
}

#[test]
fn query_pushdown_matches_default() {
    use crate::model::{SearchCriteria, SortKey};
    use crate::query::{IsQuery, Predicate, PredicateOp};
    let f = fresh(BackendId::RelationalStore);
    let m = MemoryStore::new();
    populate(f.repo.backend());
    populate(&m);
    let c = SearchCriteria {
        sort_key: SortKey::NumEvents,
        beam_type: Some("MUONS".into()),
        ..Default::default()
    };
    for open in [false, true] {
        assert_eq!(f.repo.find_runs(&c, open).unwrap(), m.find_runs(&c, open).unwrap());
    }
    let mut q = IsQuery::new("BeamInfo", "beam_energy");
    assert_eq!(f.repo.find_is_instances(&q).unwrap(), m.find_is_instances(&q).unwrap());
    q.predicate = Some(Predicate::new(PredicateOp::Gt, Scalar::Int(60)).unwrap());
    let hits = f.repo.find_is_instances(&q).unwrap();
    assert_eq!(hits.len(), 2);
    assert_eq!(hits, m.find_is_instances(&q).unwrap());
    q.parameter_name = "label".into();
    q.predicate = Some(Predicate::new(PredicateOp::Contains, Scalar::Str("<&>".into())).unwrap());
    assert_eq!(f.repo.find_is_instances(&q).unwrap().len(), 3);
}
