use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Attribute, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Information,
    Warning,
    Error,
    Fatal,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Information => "Information",
            Severity::Warning => "Warning",
            Severity::Error => "Error",
            Severity::Fatal => "Fatal",
        }
    }
}

impl FromStr for Severity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Information" => Ok(Severity::Information),
            "Warning" => Ok(Severity::Warning),
            "Error" => Ok(Severity::Error),
            "Fatal" => Ok(Severity::Fatal),
            other => Err(format!("unknown severity {other:?}")),
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A message reported through the message reporting system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrsMessage {
    pub message_name: String,
    pub severity: Severity,
    pub application: String,
    pub text: String,
    pub timestamp: Timestamp,
    pub qualifiers: Vec<String>,
}

/// A named, typed information object published on an IS server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsInfo {
    pub server: String,
    pub object_name: String,
    pub class_name: String,
    pub attributes: Vec<Attribute>,
    pub timestamp: Timestamp,
}

impl IsInfo {
    /// Name of the first attribute that appears more than once, if any.
    pub fn duplicate_attribute(&self) -> Option<&str> {
        let mut seen = HashSet::new();
        self.attributes
            .iter()
            .map(|a| a.name.as_str())
            .find(|name| !seen.insert(*name))
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommentOrigin {
    Online,
    Offline,
    Web,
}

impl CommentOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            CommentOrigin::Online => "Online",
            CommentOrigin::Offline => "Offline",
            CommentOrigin::Web => "Web",
        }
    }
}

impl FromStr for CommentOrigin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Online" => Ok(CommentOrigin::Online),
            "Offline" => Ok(CommentOrigin::Offline),
            "Web" => Ok(CommentOrigin::Web),
            other => Err(format!("unknown comment origin {other:?}")),
        }
    }
}

/// Metadata of a file attached to a comment. The content lives in the
/// repository's blob area, addressed by `digest`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attachment {
    pub filename: String,
    pub media_type: String,
    pub size_bytes: u64,
    pub digest: String,
}

impl Attachment {
    /// Describes `content`, computing its size and digest.
    pub fn describe(filename: impl Into<String>, media_type: impl Into<String>, content: &[u8]) -> Self {
        Attachment {
            filename: filename.into(),
            media_type: media_type.into(),
            size_bytes: content.len() as u64,
            digest: content_digest(content),
        }
    }
}

/// Lowercase hex SHA-256 of `content`.
pub fn content_digest(content: &[u8]) -> String {
    hex::encode(Sha256::digest(content))
}

pub fn is_valid_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

/// Identifier-like strings (attribute names, file names, media types) must
/// be non-empty and free of control characters and non-characters.
pub fn is_valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| !c.is_control() && !matches!(c, '\u{FFFE}' | '\u{FFFF}'))
}

pub fn is_valid_filename(name: &str) -> bool {
    is_valid_name(name)
        && name != "."
        && name != ".."
        && name.len() <= 255
        && !name.contains(['/', '\\'])
}

/// Loose `type/subtype` check; parameters after `;` are allowed.
pub fn is_valid_media_type(s: &str) -> bool {
    let essence = s.split(';').next().unwrap_or("").trim();
    is_valid_name(s)
        && s.len() <= 255
        && essence.contains('/')
        && !essence.contains(char::is_whitespace)
}

/// A stored operator comment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comment {
    pub comment_id: u64,
    pub author: String,
    pub created_at: Timestamp,
    pub text: String,
    pub origin: CommentOrigin,
    pub attachments: Vec<Attachment>,
}

/// A comment before the repository assigns its id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewComment {
    pub author: String,
    pub created_at: Timestamp,
    pub text: String,
    pub origin: CommentOrigin,
    pub attachments: Vec<Attachment>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CommentError {
    #[error("comment has neither text nor attachments")]
    Empty,
    #[error("invalid attachment filename {0:?}")]
    BadFilename(String),
    #[error("invalid attachment media type {0:?}")]
    BadMediaType(String),
    #[error("invalid attachment digest {0:?}")]
    BadDigest(String),
}

impl NewComment {
    pub fn validate(&self) -> Result<(), CommentError> {
        if self.text.is_empty() && self.attachments.is_empty() {
            return Err(CommentError::Empty);
        }
        for a in &self.attachments {
            if !is_valid_filename(&a.filename) {
                return Err(CommentError::BadFilename(a.filename.clone()));
            }
            if !is_valid_media_type(&a.media_type) {
                return Err(CommentError::BadMediaType(a.media_type.clone()));
            }
            if !is_valid_digest(&a.digest) {
                return Err(CommentError::BadDigest(a.digest.clone()));
            }
        }
        Ok(())
    }

    pub fn with_id(self, comment_id: u64) -> Comment {
        Comment {
            comment_id,
            author: self.author,
            created_at: self.created_at,
            text: self.text,
            origin: self.origin,
            attachments: self.attachments,
        }
    }
}
