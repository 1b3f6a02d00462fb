use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::stats::{mean, percentile};
use super::timed::{Op, TimedBackend};
use super::workload::{generate_stream, WorkloadSpec};
use crate::ingest::{AcquisitionConfig, AcquisitionServer};
use crate::model::{Kind, RunStatus};
use crate::storage::{create_repository, Backend, BackendId, OpenOptions, Repository, StoreError};

#[derive(Debug, Clone)]
pub struct ScalabilityOptions {
    pub backend: BackendId,
    /// Each point gets a fresh repository in `<work_dir>/p<publishers>`.
    pub work_dir: PathBuf,
    pub points: Vec<u64>,
    /// Per-publisher workload; `publishers` is overridden by each point.
    pub spec: WorkloadSpec,
    pub durable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalabilityPoint {
    pub publishers: u64,
    pub sent: u64,
    pub acknowledged: u64,
    pub persisted: u64,
    /// IS store time at the storage boundary.
    pub mean_us: f64,
    pub p95_us: f64,
    /// IS round trip through the acquisition server, as seen by publishers.
    pub mean_rtt_us: f64,
    pub p95_rtt_us: f64,
    /// First few rejection replies, if any.
    pub errors: Vec<String>,
}

impl ScalabilityPoint {
    pub fn lossless(&self) -> bool {
        self.sent == self.acknowledged && self.acknowledged == self.persisted
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalabilityReport {
    pub backend: BackendId,
    pub points: Vec<ScalabilityPoint>,
}

/// Number of acknowledged effects a repository holds: one per run start,
/// one per closed run, one per record, comment and orphan.
pub fn persisted_count(backend: &dyn Backend) -> Result<u64, StoreError> {
    let mut n = 0;
    for h in backend.list_run_headers(None)? {
        let d = backend.get_run_detail(&h.partition, h.run_number)?;
        n += 1 + u64::from(h.status != RunStatus::Open);
        n += (d.mrs.len() + d.is.len() + d.comments.len()) as u64;
    }
    for p in backend.partitions()? {
        n += backend.orphans(&p)?.len() as u64;
    }
    Ok(n)
}

struct PublisherResult {
    sent: u64,
    acknowledged: u64,
    is_rtt_us: Vec<f64>,
    errors: Vec<String>,
}

fn publish(addr: std::net::SocketAddr, envelopes: &[crate::model::MessageEnvelope]) -> std::io::Result<PublisherResult> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut out = PublisherResult {
        sent: 0,
        acknowledged: 0,
        is_rtt_us: Vec::new(),
        errors: Vec::new(),
    };
    let mut reply = String::new();
    for env in envelopes {
        let start = Instant::now();
        writer.write_all(env.to_line().as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        out.sent += 1;
        reply.clear();
        if reader.read_line(&mut reply)? == 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "server closed the connection"));
        }
        let rtt = start.elapsed().as_secs_f64() * 1e6;
        if reply.trim_end() == format!("ok {}", env.seq) {
            out.acknowledged += 1;
            if env.kind() == Kind::Is {
                out.is_rtt_us.push(rtt);
            }
        } else if out.errors.len() < 10 {
            out.errors.push(reply.trim_end().to_owned());
        }
    }
    Ok(out)
}

fn run_point(options: &ScalabilityOptions, publishers: u64) -> Result<ScalabilityPoint, StoreError> {
    let spec = WorkloadSpec {
        publishers,
        ..options.spec.clone()
    };
    spec.validate().map_err(StoreError::Invalid)?;
    let stream = generate_stream(&spec);
    let root = point_root(&options.work_dir, options.backend, publishers);
    let store: Arc<dyn Backend> = match options.backend {
        BackendId::Memory => create_repository(BackendId::Memory, &root)?.into_backend().into(),
        b => {
            create_repository(b, &root)?;
            let open = OpenOptions {
                writable: true,
                durable: options.durable,
            };
            Repository::open(&root, open)?.into_backend().into()
        }
    };
    let timed = Arc::new(TimedBackend::new(store.clone()));
    let server = AcquisitionServer::bind("127.0.0.1:0", timed.clone(), AcquisitionConfig::default())?.spawn()?;
    let addr = server.addr();
    let results: Vec<std::io::Result<PublisherResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = stream
            .publishers
            .iter()
            .map(|envs| s.spawn(move || publish(addr, envs)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("publisher thread panicked")).collect()
    });
    server.shutdown();
    let mut point = ScalabilityPoint {
        publishers,
        sent: 0,
        acknowledged: 0,
        persisted: persisted_count(store.as_ref())?,
        mean_us: f64::NAN,
        p95_us: f64::NAN,
        mean_rtt_us: f64::NAN,
        p95_rtt_us: f64::NAN,
        errors: Vec::new(),
    };
    let mut rtts = Vec::new();
    for r in results {
        let r = r?;
        point.sent += r.sent;
        point.acknowledged += r.acknowledged;
        rtts.extend(r.is_rtt_us);
        point.errors.extend(r.errors);
    }
    let is: Vec<f64> = timed
        .take_samples()
        .into_iter()
        .filter(|s| s.op == Op::Is)
        .map(|s| s.latency_us)
        .collect();
    point.mean_us = mean(&is);
    point.p95_us = percentile(&is, 95.0);
    point.mean_rtt_us = mean(&rtts);
    point.p95_rtt_us = percentile(&rtts, 95.0);
    Ok(point)
}

fn point_root(work_dir: &Path, backend: BackendId, publishers: u64) -> PathBuf {
    match backend {
        BackendId::RelationalStore => work_dir.join(format!("p{publishers}.sqlite")),
        _ => work_dir.join(format!("p{publishers}")),
    }
}

/// Runs the publisher sweep: for every point, `publishers` concurrent
/// simulated acquisition programs each stream their own partition through
/// a fresh acquisition server and wait for every acknowledgement.
pub fn run_scalability_bench(options: &ScalabilityOptions) -> Result<ScalabilityReport, StoreError> {
    std::fs::create_dir_all(&options.work_dir)?;
    let points = options
        .points
        .iter()
        .map(|&n| run_point(options, n))
        .collect::<Result<_, _>>()?;
    Ok(ScalabilityReport {
        backend: options.backend,
        points,
    })
}

impl ScalabilityReport {
    pub fn lossless(&self) -> bool {
        self.points.iter().all(ScalabilityPoint::lossless)
    }

    /// `publishers,sent,acknowledged,persisted,mean_us,p95_us,mean_rtt_us,p95_rtt_us`
    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "publishers",
            "sent",
            "acknowledged",
            "persisted",
            "mean_us",
            "p95_us",
            "mean_rtt_us",
            "p95_rtt_us",
        ])?;
        for p in &self.points {
            w.write_record([
                p.publishers.to_string(),
                p.sent.to_string(),
                p.acknowledged.to_string(),
                p.persisted.to_string(),
                format!("{:.3}", p.mean_us),
                format!("{:.3}", p.p95_us),
                format!("{:.3}", p.mean_rtt_us),
                format!("{:.3}", p.p95_rtt_us),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Gnuplot data: `publishers mean_us p95_us mean_rtt_us p95_rtt_us`.
    pub fn write_dat(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# {} publishers mean_us p95_us mean_rtt_us p95_rtt_us", self.backend.short_name())?;
        for p in &self.points {
            writeln!(
                out,
                "{} {:.3} {:.3} {:.3} {:.3}",
                p.publishers, p.mean_us, p.p95_us, p.mean_rtt_us, p.p95_rtt_us
            )?;
        }
        Ok(())
    }
}
