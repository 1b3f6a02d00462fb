use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use obk_core::bench::{compare_backends, run_latency_bench, run_scalability_bench, Op, ScalabilityOptions, WorkloadSpec};
use obk_core::storage::{create_repository, BackendId, OpenOptions, Repository};

#[derive(clap::Args, Clone)]
pub struct Workload {
    #[arg(long, default_value_t = 500)]
    runs: u64,
    #[arg(long, default_value_t = 10)]
    mrs_per_run: u64,
    #[arg(long, default_value_t = 20)]
    is_per_run: u64,
    #[arg(long, default_value_t = 1)]
    comments_per_run: u64,
    #[arg(long, default_value_t = 6)]
    is_attrs: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl Workload {
    fn spec(&self) -> WorkloadSpec {
        WorkloadSpec {
            num_runs: self.runs,
            mrs_per_run: self.mrs_per_run,
            is_per_run: self.is_per_run,
            comments_per_run: self.comments_per_run,
            is_attrs_per_object: self.is_attrs,
            publishers: 1,
            seed: self.seed,
        }
    }
}

#[derive(clap::Subcommand)]
pub enum Command {
    /// Per-operation store latency against run index.
    Latency {
        #[arg(long)]
        backend: BackendId,
        /// Scratch directory for the repository; must not exist yet.
        #[arg(long)]
        work_dir: PathBuf,
        /// Directory receiving `<backend>_latency.csv`, `_summary.csv` and `.dat`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        durable: bool,
        #[command(flatten)]
        workload: Workload,
    },
    /// Throughput and loss with several concurrent publishers.
    Scale {
        #[arg(long)]
        backend: BackendId,
        #[arg(long)]
        work_dir: PathBuf,
        /// Directory receiving `<backend>_scale.csv` and `.dat`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        publishers: Vec<u64>,
        #[arg(long)]
        durable: bool,
        #[command(flatten)]
        workload: Workload,
    },
    /// Replay one workload into both persistent backends and compare.
    Compare {
        #[arg(long)]
        work_dir: PathBuf,
        #[command(flatten)]
        workload: Workload,
    },
}

pub fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Latency { backend, work_dir, out, durable, workload } => {
            std::fs::create_dir_all(&work_dir)?;
            std::fs::create_dir_all(&out)?;
            let root = match backend {
                BackendId::RelationalStore => work_dir.join("latency.sqlite"),
                _ => work_dir.join("latency"),
            };
            let repo = if backend == BackendId::Memory {
                create_repository(backend, &root)?
            } else {
                create_repository(backend, &root).with_context(|| format!("creating {}", root.display()))?;
                Repository::open(&root, OpenOptions { writable: true, durable })?
            };
            let report = run_latency_bench(Arc::from(repo.into_backend()), &workload.spec())?;
            let prefix = format!("{}_latency", backend.short_name());
            report.write_files(&out, &prefix)?;
            println!("op       count   median_us   p95_us");
            for op in Op::ALL {
                if let Some(s) = report.summary(op) {
                    println!("{:<7} {:>6} {:>11.1} {:>8.1}", op.as_str(), s.count, s.median, s.p95);
                }
            }
            println!("SOR slope: {:.4} us/run", report.sor_slope());
            println!("wrote {}", out.join(format!("{prefix}.csv")).display());
        }
        Command::Scale { backend, work_dir, out, publishers, durable, workload } => {
            std::fs::create_dir_all(&out)?;
            let report = run_scalability_bench(&ScalabilityOptions {
                backend,
                work_dir,
                points: publishers,
                spec: workload.spec(),
                durable,
            })?;
            let name = format!("{}_scale", backend.short_name());
            report.write_csv(std::fs::File::create(out.join(format!("{name}.csv")))?)?;
            report.write_dat(std::fs::File::create(out.join(format!("{name}.dat")))?)?;
            println!("publishers      sent  acknowledged  persisted  mean_us");
            for p in &report.points {
                println!(
                    "{:>10} {:>9} {:>13} {:>10} {:>8.1}",
                    p.publishers, p.sent, p.acknowledged, p.persisted, p.mean_us
                );
            }
            if !report.lossless() {
                anyhow::bail!("messages were lost");
            }
        }
        Command::Compare { work_dir, workload } => {
            let cmp = compare_backends(&workload.spec(), &work_dir)?;
            print!("{}", cmp.table());
            if !cmp.exports_equal {
                anyhow::bail!("backend exports differ");
            }
        }
    }
    Ok(())
}
