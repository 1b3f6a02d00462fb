use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use obk_service::{AppState, ServiceConfig};

#[derive(clap::Args)]
pub struct Args {
    /// Service configuration (TOML).
    #[arg(long, required_unless_present = "root")]
    config: Option<PathBuf>,
    /// Serve this repository with default settings instead of a config file.
    #[arg(long, conflicts_with = "config")]
    root: Option<PathBuf>,
    /// Overrides the configured listen address.
    #[arg(long)]
    listen: Option<SocketAddr>,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let mut config = match (&args.config, args.root) {
        (Some(path), _) => ServiceConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(root)) => ServiceConfig::new(root),
        (None, None) => unreachable!("clap requires --config or --root"),
    };
    if let Some(listen) = args.listen {
        config.listen = listen;
    }
    let listen = config.listen;
    let state = AppState::open(config).map_err(|e| anyhow::anyhow!(e))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        println!("serving on {}", listener.local_addr()?);
        obk_service::serve(listener, state).await?;
        Ok(())
    })
}
