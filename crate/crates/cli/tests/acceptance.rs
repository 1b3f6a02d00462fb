//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the report is always printed; exits non-zero on any failure.

#[allow(dead_code)]
#[path = "../../core/tests/support/lifecycle.rs"]
mod lifecycle;
#[allow(dead_code)]
#[path = "../../core/tests/support/query_oracle.rs"]
mod query_oracle;
#[allow(dead_code)]
#[path = "../../service/tests/support/golden.rs"]
mod golden;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use obk_core::bench::{
    compare_backends, generate_stream, persisted_count, replay, run_latency_bench, run_scalability_bench, Op,
    ScalabilityOptions, Stream, WorkloadSpec,
};
use obk_core::ingest::OrphanPolicy;
use obk_core::model::{RunStatus, Timestamp};
use obk_core::storage::{create_repository, export_canonical_string, Backend, BackendId, MemoryStore, OpenOptions, Repository};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn work_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("work dir");
    dir
}

fn lifecycle_exhaustive() -> Outcome {
    let start = Instant::now();
    let mut sequences = 0;
    let mut full = 0;
    for policy in [OrphanPolicy::Reject, OrphanPolicy::Store] {
        let r = lifecycle::check_all(8, policy);
        if let Some(m) = r.mismatches.first() {
            return Err(format!("{} mismatches under {policy:?}, first: {m:?}", r.mismatches.len()));
        }
        sequences += r.sequences;
        full = r.full_length;
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{full} sequences of length 8 ({sequences} prefixes, both orphan policies) in {secs:.1}s");
    if full != 5u64.pow(8) {
        Err(format!("only {detail}"))
    } else if secs >= 60.0 {
        Err(format!("too slow: {detail}"))
    } else {
        Ok(detail)
    }
}

fn backend_equivalence() -> Outcome {
    let start = Instant::now();
    let base = work_dir("equivalence");
    let mut messages = usize::MAX;
    for seed in 0..20 {
        let spec = WorkloadSpec {
            num_runs: 50,
            mrs_per_run: 40,
            is_per_run: 55,
            comments_per_run: 5,
            is_attrs_per_object: 4,
            publishers: 1,
            seed: 1000 + seed,
        };
        messages = messages.min(generate_stream(&spec).len());
        let cmp = compare_backends(&spec, &base.join(format!("w{seed}"))).map_err(|e| format!("seed {seed}: {e}"))?;
        if !cmp.exports_equal {
            return Err(format!("workload seed {} exports differ", spec.seed));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("20 workloads of 50 runs, >= {messages} messages each, identical exports in {secs:.1}s");
    if messages < 5000 || secs >= 300.0 {
        Err(detail)
    } else {
        Ok(detail)
    }
}

fn query_oracle() -> Outcome {
    let mut out = query_oracle::OracleRun::default();
    let base = work_dir("query");
    let plan = [(BackendId::Memory, 40u64), (BackendId::FileStore, 10), (BackendId::RelationalStore, 10)];
    for (backend, repos) in plan {
        for seed in 0..repos {
            let root = base.join(format!("{}-{seed}", backend.short_name()));
            let repo = create_repository(backend, &root).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(0xacce97 + seed);
            let truth = query_oracle::populate(&*repo, &mut rng);
            query_oracle::check_store(&*repo, &truth, 10, &mut rng, &mut out);
        }
    }
    let detail = format!(
        "{} repository/criteria pairs ({} non-empty), {} mismatches",
        out.pairs,
        out.nonempty,
        out.mismatches.len()
    );
    if out.pairs >= 1000 && out.mismatches.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; first: {:?}", out.mismatches.first()))
    }
}

struct Latency {
    file: obk_core::bench::LatencyReport,
    relational: obk_core::bench::LatencyReport,
}

/// Independent 500-run repetitions pooled per backend.
const LATENCY_REPETITIONS: usize = 3;

fn latency_benches() -> Result<Latency, String> {
    let base = work_dir("latency");
    let spec = WorkloadSpec::default();
    let mut reports = Vec::new();
    for backend in [BackendId::FileStore, BackendId::RelationalStore] {
        let mut pooled: Option<obk_core::bench::LatencyReport> = None;
        for rep in 0..LATENCY_REPETITIONS {
            let root = base.join(match backend {
                BackendId::RelationalStore => format!("repo{rep}.sqlite"),
                _ => format!("repo{rep}"),
            });
            let repo = create_repository(backend, &root).map_err(|e| e.to_string())?;
            let report = run_latency_bench(Arc::from(repo.into_backend()), &spec).map_err(|e| e.to_string())?;
            if report.rejected > 0 {
                return Err(format!("{backend}: {} envelopes rejected", report.rejected));
            }
            match &mut pooled {
                None => pooled = Some(report),
                Some(p) => {
                    p.samples.extend(report.samples);
                    p.accepted += report.accepted;
                }
            }
        }
        let report = pooled.expect("at least one repetition");
        report
            .write_files(&base, &format!("{}_latency", backend.short_name()))
            .map_err(|e| e.to_string())?;
        reports.push(report);
    }
    let relational = reports.pop().expect("two reports");
    let file = reports.pop().expect("two reports");
    Ok(Latency { file, relational })
}

fn trend(l: &Latency) -> Outcome {
    let slope = l.file.sor_slope();
    let f_first = l.file.median_in(Op::Sor, 0, 100);
    let f_last = l.file.median_in(Op::Sor, 400, 500);
    let r_first = l.relational.median_in(Op::Sor, 0, 100);
    let r_last = l.relational.median_in(Op::Sor, 400, 500);
    let f_ratio = f_last / f_first;
    let r_ratio = r_last / r_first;
    let detail = format!(
        "FileStore SOR slope {slope:.3} us/run, last/first median {f_ratio:.2} ({f_first:.0} -> {f_last:.0} us); \
         RelationalStore ratio {r_ratio:.2} ({r_first:.0} -> {r_last:.0} us)"
    );
    if slope > 0.0 && f_ratio >= 1.25 && r_ratio < 2.0 && r_ratio > 0.5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn flat_is(l: &Latency) -> Outcome {
    let windows = l.relational.window_medians(Op::Is, 50);
    let values: Vec<f64> = windows.iter().map(|&(_, m)| m).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(0.0, f64::max);
    let spread = hi / lo - 1.0;
    let detail = format!(
        "RelationalStore IS median over {} windows of 50 runs ({LATENCY_REPETITIONS} repetitions pooled): {lo:.1}..{hi:.1} us (spread {:.0}%)",
        windows.len(),
        spread * 100.0
    );
    if windows.len() == 10 && spread < 0.5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scalability() -> Outcome {
    let base = work_dir("scale");
    let spec = WorkloadSpec {
        num_runs: 20,
        mrs_per_run: 10,
        is_per_run: 20,
        comments_per_run: 1,
        is_attrs_per_object: 6,
        publishers: 1,
        seed: 7,
    };
    let mut parts = Vec::new();
    for backend in [BackendId::FileStore, BackendId::RelationalStore] {
        let report = run_scalability_bench(&ScalabilityOptions {
            backend,
            work_dir: base.join(backend.short_name()),
            points: vec![1, 2, 4, 8],
            spec: spec.clone(),
            durable: false,
        })
        .map_err(|e| e.to_string())?;
        let csv = base.join(format!("{}_scale.csv", backend.short_name()));
        report
            .write_csv(std::fs::File::create(&csv).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let written = std::fs::read_to_string(&csv).map_err(|e| e.to_string())?;
        if written.lines().count() != 5 {
            return Err(format!("{} has {} lines", csv.display(), written.lines().count()));
        }
        for p in &report.points {
            if !(p.lossless() && p.acknowledged == p.sent && p.acknowledged == p.persisted) {
                return Err(format!("{backend} with {} publishers: {p:?}", p.publishers));
            }
        }
        let sent: Vec<String> = report.points.iter().map(|p| format!("{}:{}", p.publishers, p.persisted)).collect();
        parts.push(format!("{backend} {}", sent.join(" ")));
    }
    for n in [1, 2, 4, 8] {
        let file = base.join("file").join(format!("p{n}"));
        let relational = base.join("relational").join(format!("p{n}.sqlite"));
        let export = |root: &Path| -> Result<String, String> {
            let repo = Repository::open(root, OpenOptions::default()).map_err(|e| format!("{}: {e}", root.display()))?;
            export_canonical_string(&*repo).map_err(|e| e.to_string())
        };
        if export(&file)? != export(&relational)? {
            return Err(format!("exports differ after the {n}-publisher run"));
        }
    }
    Ok(format!(
        "publishers 1/2/4/8 lossless, acknowledged = persisted, backend exports equal ({}); CSV in {}",
        parts.join("; "),
        base.display()
    ))
}

struct Acquire {
    child: Child,
    addr: String,
}

fn spawn_acquire(backend: BackendId, root: &Path) -> Result<Acquire, String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_obk"))
        .args(["acquire", "--listen", "127.0.0.1:0", "--durable", "--backend", backend.short_name()])
        .arg("--root")
        .arg(root)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().expect("piped"))
        .read_line(&mut line)
        .map_err(|e| e.to_string())?;
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .ok_or_else(|| format!("unexpected banner {line:?}"))?
        .to_owned();
    Ok(Acquire { child, addr })
}

fn latest_timestamp(store: &dyn Backend, partition: &str, run: u64) -> Result<Timestamp, String> {
    let d = store.get_run_detail(partition, run).map_err(|e| e.to_string())?;
    let times = d
        .mrs
        .iter()
        .map(|r| r.message.timestamp)
        .chain(d.is.iter().map(|r| r.info.timestamp))
        .chain(d.comments.iter().map(|c| c.created_at));
    Ok(times.fold(d.header.start_time, Timestamp::max))
}

/// Envelopes the durability publisher sends ahead of the acknowledgements.
const IN_FLIGHT: u64 = 4;

/// Publishes a stream to a durable acquisition server, kills it once a
/// random number of envelopes has been acknowledged, and checks the
/// repository against a replay of the persisted prefix.
fn durability_trial(trial: u64, rng: &mut ChaCha8Rng, base: &Path) -> Result<String, String> {
    let backend = if trial.is_multiple_of(2) { BackendId::FileStore } else { BackendId::RelationalStore };
    let root = base.join(match backend {
        BackendId::RelationalStore => format!("t{trial}.sqlite"),
        _ => format!("t{trial}"),
    });
    let spec = WorkloadSpec {
        num_runs: 6,
        mrs_per_run: 10,
        is_per_run: 20,
        comments_per_run: 1,
        is_attrs_per_object: 3,
        publishers: 1,
        seed: 500 + trial,
    };
    let stream = generate_stream(&spec);
    let envelopes = stream.publishers[0].clone();
    let kill_after = rng.gen_range(1..envelopes.len() as u64 - 1);

    let mut server = spawn_acquire(backend, &root)?;
    let conn = TcpStream::connect(&server.addr).map_err(|e| e.to_string())?;
    let acked = Arc::new(AtomicU64::new(0));
    let reader = {
        let conn = conn.try_clone().map_err(|e| e.to_string())?;
        let acked = acked.clone();
        std::thread::spawn(move || -> Result<(), String> {
            for line in BufReader::new(conn).lines() {
                let Ok(line) = line else { break };
                if !line.starts_with("ok ") {
                    return Err(format!("server rejected an envelope: {line}"));
                }
                acked.fetch_add(1, Ordering::SeqCst);
            }
            Ok(())
        })
    };
    let stop = Arc::new(AtomicBool::new(false));
    let writer = {
        let mut conn = conn.try_clone().map_err(|e| e.to_string())?;
        let (acked, stop) = (acked.clone(), stop.clone());
        std::thread::spawn(move || {
            for (sent, env) in envelopes.iter().enumerate() {
                while sent as u64 >= acked.load(Ordering::SeqCst) + IN_FLIGHT {
                    if stop.load(Ordering::SeqCst) {
                        return;
                    }
                    std::thread::sleep(Duration::from_micros(50));
                }
                if writeln!(conn, "{}", env.to_line()).is_err() {
                    return;
                }
            }
        })
    };
    let deadline = Instant::now() + Duration::from_secs(60);
    while acked.load(Ordering::SeqCst) < kill_after {
        if Instant::now() > deadline {
            stop.store(true, Ordering::SeqCst);
            let _ = server.child.kill();
            return Err(format!("trial {trial}: no progress past {} acks", acked.load(Ordering::SeqCst)));
        }
        std::thread::sleep(Duration::from_micros(20));
    }
    server.child.kill().map_err(|e| e.to_string())?;
    stop.store(true, Ordering::SeqCst);
    server.child.wait().map_err(|e| e.to_string())?;
    let _ = conn.shutdown(std::net::Shutdown::Both);
    reader.join().map_err(|_| "reader panicked".to_string())??;
    let _ = writer.join();
    let acked = acked.load(Ordering::SeqCst);

    let repo = Repository::open(&root, OpenOptions::default()).map_err(|e| format!("reopen: {e}"))?;
    let persisted = persisted_count(&*repo).map_err(|e| e.to_string())?;
    if persisted < acked {
        return Err(format!("trial {trial}: {acked} acknowledged but only {persisted} persisted"));
    }
    let prefix = Stream {
        publishers: vec![stream.publishers[0][..persisted as usize].to_vec()],
    };
    let expected = MemoryStore::new();
    replay(&prefix, &expected, OrphanPolicy::Reject).map_err(|e| e.to_string())?;
    let got = export_canonical_string(&*repo).map_err(|e| e.to_string())?;
    if got != export_canonical_string(&expected).map_err(|e| e.to_string())? {
        return Err(format!("trial {trial}: repository differs from the first {persisted} envelopes"));
    }

    let partition = WorkloadSpec::partition(0);
    let open = repo.open_run(&partition).map_err(|e| e.to_string())?;
    let mut closed = "no open run";
    if let Some(run) = open {
        let latest = latest_timestamp(&*repo, &partition, run)?;
        drop(repo);
        let out = Command::new(env!("CARGO_BIN_EXE_obk"))
            .args(["admin", "force-close", "--partition", &partition, "--run", &run.to_string(), "--root"])
            .arg(&root)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("force-close failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
        let repo = Repository::open(&root, OpenOptions::default()).map_err(|e| e.to_string())?;
        let h = repo.get_run_detail(&partition, run).map_err(|e| e.to_string())?.header;
        if h.status != RunStatus::Bad || h.end_time != Some(latest) {
            return Err(format!("trial {trial}: after force-close {h:?}, expected Bad ending {latest}"));
        }
        if repo.open_run(&partition).map_err(|e| e.to_string())?.is_some() {
            return Err(format!("trial {trial}: run still open after force-close"));
        }
        closed = "dangling run closed Bad";
    }
    Ok(format!("{backend} acked {acked}/{} persisted {persisted}, {closed}", stream.len()))
}

fn durability() -> Outcome {
    let base = work_dir("durability");
    let mut rng = ChaCha8Rng::seed_from_u64(0x0d02_ab1e);
    let mut acked_total = 0;
    let mut closed = 0;
    for trial in 0..10 {
        let line = durability_trial(trial, &mut rng, &base)?;
        acked_total += line
            .split_whitespace()
            .nth(2)
            .and_then(|s| s.split('/').next())
            .and_then(|s| s.parse::<u64>().ok())
            .unwrap_or(0);
        closed += u64::from(line.ends_with("closed Bad"));
    }
    Ok(format!(
        "10 kills: all {acked_total} acknowledged envelopes persisted, {closed} dangling runs force-closed Bad"
    ))
}

fn api_conformance() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../service/tests/golden/api_v1.json");
    let report = golden::run(&path, false);
    let detail = format!("{} golden exchanges, {} failures", report.cases, report.failures.len());
    if report.cases == 30 && report.passed() {
        Ok(detail)
    } else {
        Err(format!("{detail}: {}", report.failures.join(" | ")))
    }
}

fn main() {
    let mut failed = 0;
    let mut report = |n: u32, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{n}] {name}: {detail}");
        let _ = std::io::stdout().flush();
    };
    report(1, "lifecycle oracle", lifecycle_exhaustive());
    report(2, "backend equivalence", backend_equivalence());
    report(3, "query oracle", query_oracle());
    match latency_benches() {
        Ok(l) => {
            report(4, "latency trend", trend(&l));
            report(5, "flat IS cost", flat_is(&l));
        }
        Err(e) => {
            report(4, "latency trend", Err(e.clone()));
            report(5, "flat IS cost", Err(e));
        }
    }
    report(6, "scalability", scalability());
    report(7, "durability", durability());
    report(8, "API conformance", api_conformance());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
