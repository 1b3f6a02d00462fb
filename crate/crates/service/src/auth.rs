use std::collections::HashMap;
use std::sync::Mutex;

use argon2::password_hash::rand_core::{OsRng, RngCore};
use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::{Algorithm, Argon2, Params, Version};
use obk_core::model::Timestamp;

use crate::config::HashParams;

#[derive(Debug, thiserror::Error)]
#[error("password hashing failed: {0}")]
pub struct HashError(String);

/// Salted Argon2id hash in PHC string form.
pub fn hash_password(password: &str, params: HashParams) -> Result<String, HashError> {
    let p = Params::new(params.memory_kib, params.iterations, params.parallelism, None)
        .map_err(|e| HashError(e.to_string()))?;
    let salt = SaltString::generate(&mut OsRng);
    Argon2::new(Algorithm::Argon2id, Version::V0x13, p)
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| HashError(e.to_string()))
}

/// Checks `password` against a PHC hash. The digest comparison is constant
/// time; malformed hashes never verify.
pub fn verify_password(password: &str, phc: &str) -> bool {
    let Ok(parsed) = PasswordHash::new(phc) else {
        return false;
    };
    Argon2::default().verify_password(password.as_bytes(), &parsed).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Session {
    username: String,
    expires_at: Timestamp,
}

/// In-memory bearer tokens: 128 random bits, hex encoded.
#[derive(Debug, Default)]
pub struct Sessions {
    tokens: Mutex<HashMap<String, Session>>,
}

impl Sessions {
    pub fn issue(&self, username: &str, expires_at: Timestamp) -> String {
        let mut bytes = [0u8; 16];
        OsRng.fill_bytes(&mut bytes);
        let token = hex::encode(bytes);
        self.lock().insert(
            token.clone(),
            Session {
                username: username.to_owned(),
                expires_at,
            },
        );
        token
    }

    /// Username of an unexpired token. Expired tokens are dropped.
    pub fn resolve(&self, token: &str, now: Timestamp) -> Option<String> {
        let mut tokens = self.lock();
        tokens.retain(|_, s| s.expires_at > now);
        tokens.get(token).map(|s| s.username.clone())
    }

    pub fn revoke_user(&self, username: &str) {
        self.lock().retain(|_, s| s.username != username);
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Session>> {
        self.tokens.lock().unwrap_or_else(|p| p.into_inner())
    }
}
