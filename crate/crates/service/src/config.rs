use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Service configuration, usually read from a TOML file:
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// repository = "/srv/obk/main"
/// repositories_dir = "/srv/obk"
/// token_ttl_secs = 28800
/// inline_types = ["text/plain", "image/png", "image/jpeg", "application/pdf"]
/// max_upload_bytes = 67108864
///
/// [password_hash]
/// memory_kib = 19456
/// iterations = 2
/// parallelism = 1
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// Repository served at startup.
    pub repository: PathBuf,
    /// Where repositories created through the admin API are placed;
    /// defaults to the parent directory of `repository`.
    #[serde(default)]
    pub repositories_dir: Option<PathBuf>,
    #[serde(default = "default_ttl")]
    pub token_ttl_secs: u64,
    /// Media types served with `Content-Disposition: inline`.
    #[serde(default = "default_inline")]
    pub inline_types: Vec<String>,
    #[serde(default = "default_upload")]
    pub max_upload_bytes: usize,
    #[serde(default)]
    pub password_hash: HashParams,
}

/// Argon2id cost parameters for new password hashes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashParams {
    pub memory_kib: u32,
    pub iterations: u32,
    pub parallelism: u32,
}

impl Default for HashParams {
    fn default() -> Self {
        HashParams {
            memory_kib: 19 * 1024,
            iterations: 2,
            parallelism: 1,
        }
    }
}

impl HashParams {
    /// Cheapest parameters argon2 accepts; for tests and fixtures only.
    pub const INSECURE_FAST: HashParams = HashParams {
        memory_kib: 8,
        iterations: 1,
        parallelism: 1,
    };
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_ttl() -> u64 {
    8 * 3600
}

pub fn default_inline() -> Vec<String> {
    ["text/plain", "image/png", "image/jpeg", "application/pdf"]
        .map(String::from)
        .to_vec()
}

fn default_upload() -> usize {
    64 << 20
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
}

impl ServiceConfig {
    pub fn new(repository: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            listen: default_listen(),
            repository: repository.into(),
            repositories_dir: None,
            token_ttl_secs: default_ttl(),
            inline_types: default_inline(),
            max_upload_bytes: default_upload(),
            password_hash: HashParams::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn repositories_dir(&self) -> PathBuf {
        self.repositories_dir.clone().unwrap_or_else(|| {
            self.repository
                .parent()
                .map(Path::to_owned)
                .unwrap_or_else(|| PathBuf::from("."))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_and_full_forms() {
        let c = ServiceConfig::from_toml(r#"repository = "/srv/obk/main""#).unwrap();
        assert_eq!(c, ServiceConfig::new("/srv/obk/main"));
        assert_eq!(c.repositories_dir(), PathBuf::from("/srv/obk"));
        let c = ServiceConfig::from_toml(
            r#"
            listen = "0.0.0.0:9000"
            repository = "r"
            token_ttl_secs = 60
            inline_types = ["text/plain"]
            [password_hash]
            memory_kib = 64
            iterations = 3
            parallelism = 2
            "#,
        )
        .unwrap();
        assert_eq!(c.token_ttl_secs, 60);
        assert_eq!(c.password_hash.iterations, 3);
        assert!(ServiceConfig::from_toml(r#"repository = "r"
            colour = "blue""#)
        .is_err());
    }
}
