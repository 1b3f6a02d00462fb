use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use obk_core::model::{Role, Timestamp, User};
use obk_core::storage::{Backend, OpenOptions, Repository, StoreError};

use crate::auth::{hash_password, verify_password, HashError, Sessions};
use crate::config::ServiceConfig;

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

/// Shared state behind every request handler.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    repo: RwLock<Arc<dyn Backend>>,
    sessions: Sessions,
    clock: Clock,
    /// Verified against when the username is unknown, so that unknown users
    /// and wrong passwords take the same time.
    dummy_hash: String,
}

impl AppState {
    pub fn new(config: ServiceConfig, repo: Arc<dyn Backend>) -> Result<Self, HashError> {
        Self::with_clock(config, repo, Arc::new(Timestamp::now))
    }

    pub fn with_clock(config: ServiceConfig, repo: Arc<dyn Backend>, clock: Clock) -> Result<Self, HashError> {
        let dummy_hash = hash_password("obk-dummy-password", config.password_hash)?;
        Ok(AppState {
            inner: Arc::new(Inner {
                config,
                repo: RwLock::new(repo),
                sessions: Sessions::default(),
                clock,
                dummy_hash,
            }),
        })
    }

    /// Opens the configured repository for writing.
    pub fn open(config: ServiceConfig) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let repo = Repository::open(&config.repository, OpenOptions::default())?;
        Ok(Self::new(config, repo.into_backend().into())?)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn repo(&self) -> Arc<dyn Backend> {
        self.inner.repo.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn set_repo(&self, repo: Arc<dyn Backend>) {
        *self.inner.repo.write().unwrap_or_else(|p| p.into_inner()) = repo;
    }

    pub fn now(&self) -> Timestamp {
        (self.inner.clock)()
    }

    pub fn sessions(&self) -> &Sessions {
        &self.inner.sessions
    }

    pub fn repositories_dir(&self) -> PathBuf {
        self.inner.config.repositories_dir()
    }

    /// The user if `password` is correct. Blocking (password hashing).
    pub fn check_login(&self, username: &str, password: &str) -> Result<Option<User>, StoreError> {
        let user = self.repo().get_user(username)?;
        let hash = user.as_ref().map_or(self.inner.dummy_hash.as_str(), |u| u.password_hash.as_str());
        let ok = verify_password(password, hash);
        Ok(user.filter(|_| ok))
    }

    /// Resolves a bearer token to the current account, re-reading the role
    /// so demotions apply immediately.
    pub fn authenticate(&self, token: &str) -> Result<Option<(String, Role)>, StoreError> {
        let Some(username) = self.inner.sessions.resolve(token, self.now()) else {
            return Ok(None);
        };
        Ok(self.repo().get_user(&username)?.map(|u| (u.username, u.role)))
    }
}
