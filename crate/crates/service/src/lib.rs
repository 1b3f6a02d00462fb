//! HTTP JSON API of the run logbook: run search and detail, comments with
//! attachments, login and administration. Mounted under `/api/v1`.
//!
//! Reads are anonymous; posting comments needs the Writer role and the
//! admin endpoints the Admin role, presented as `Authorization: Bearer`.

mod api;
mod auth;
mod config;
mod error;
pub mod fixture;
mod params;
mod state;

use tokio::net::TcpListener;

pub use api::{is_valid_username, router, Authenticated};
pub use auth::{hash_password, verify_password, HashError, Sessions};
pub use config::{default_inline, ConfigError, HashParams, ServiceConfig};
pub use error::ApiError;
pub use params::{encode_runs_query, parse_runs_query, RunsQuery, RUNS_PARAMS};
pub use state::{AppState, Clock};

/// Serves the API on `listener` until the future is dropped or fails.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "logbook API listening");
    axum::serve(listener, router(state)).await
}
