use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use obk_core::ingest::{AcquisitionConfig, AcquisitionServer, OrphanPolicy, SubscriptionFilter};
use obk_core::storage::{BackendId, OpenOptions, Repository};

#[derive(clap::Args)]
pub struct Args {
    /// Address to listen on; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:7070")]
    listen: String,
    /// Storage backend used when the repository does not exist yet.
    #[arg(long, default_value = "file")]
    backend: BackendId,
    /// Repository root (a directory for `file`, a database file for `relational`).
    #[arg(long)]
    root: PathBuf,
    /// Subscription filter (JSON).
    #[arg(long)]
    filter: Option<PathBuf>,
    /// What to do with records arriving while no run is open.
    #[arg(long, default_value = "reject")]
    orphan: OrphanPolicy,
    /// Flush every write to stable storage before acknowledging it.
    #[arg(long)]
    durable: bool,
    /// Largest accepted envelope line in bytes.
    #[arg(long, default_value_t = 64 << 20)]
    max_line_bytes: usize,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let filter = match &args.filter {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SubscriptionFilter::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SubscriptionFilter::default(),
    };
    let repo = Repository::open_or_create(
        args.backend,
        &args.root,
        OpenOptions {
            writable: true,
            durable: args.durable,
        },
    )
    .with_context(|| format!("opening repository {}", args.root.display()))?;
    let config = AcquisitionConfig {
        filter,
        orphan_policy: args.orphan,
        max_line_bytes: args.max_line_bytes,
    };
    let server = AcquisitionServer::bind(args.listen.as_str(), Arc::from(repo.into_backend()), config)
        .with_context(|| format!("binding {}", args.listen))?;
    let addr = server.local_addr()?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "listening on {addr}")?;
    out.flush()?;
    drop(out);
    server.serve();
    Ok(())
}
