use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use super::{
    Attachment, ClosedStatus, CommentOrigin, DetectorMask, IsInfo, MrsMessage, NewComment,
    Timestamp, TriggerType,
};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kind {
    #[serde(rename = "SOR")]
    Sor,
    #[serde(rename = "EOR")]
    Eor,
    #[serde(rename = "MRS")]
    Mrs,
    #[serde(rename = "IS")]
    Is,
    #[serde(rename = "COMMENT")]
    Comment,
}

impl Kind {
    pub const ALL: [Kind; 5] = [Kind::Sor, Kind::Eor, Kind::Mrs, Kind::Is, Kind::Comment];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Sor => "SOR",
            Kind::Eor => "EOR",
            Kind::Mrs => "MRS",
            Kind::Is => "IS",
            Kind::Comment => "COMMENT",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown kind {s:?}"))
    }
}

/// Start-of-run payload: the initial header fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SorPayload {
    pub run_number: u64,
    pub max_events: u64,
    pub trigger_type: TriggerType,
    pub beam_type: String,
    pub detector_mask: DetectorMask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EorPayload {
    pub status: ClosedStatus,
    pub num_events: u64,
}

/// Attachment as carried on the wire: metadata plus base64 content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachmentUpload {
    pub filename: String,
    pub media_type: String,
    pub size_bytes: u64,
    pub digest: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommentPayload {
    pub author: String,
    pub created_at: Timestamp,
    pub text: String,
    pub origin: CommentOrigin,
    pub attachments: Vec<AttachmentUpload>,
}

impl CommentPayload {
    /// Builds a payload from a comment and the contents of its attachments.
    pub fn from_parts(comment: &NewComment, blobs: &[Vec<u8>]) -> Self {
        use base64::Engine as _;
        let attachments = comment
            .attachments
            .iter()
            .zip(blobs)
            .map(|(a, data)| AttachmentUpload {
                filename: a.filename.clone(),
                media_type: a.media_type.clone(),
                size_bytes: a.size_bytes,
                digest: a.digest.clone(),
                content: base64::engine::general_purpose::STANDARD.encode(data),
            })
            .collect();
        CommentPayload {
            author: comment.author.clone(),
            created_at: comment.created_at,
            text: comment.text.clone(),
            origin: comment.origin,
            attachments,
        }
    }

    /// Splits into the comment record and decoded blob contents.
    pub fn into_parts(self) -> Result<(NewComment, Vec<Vec<u8>>), base64::DecodeError> {
        use base64::Engine as _;
        let mut attachments = Vec::with_capacity(self.attachments.len());
        let mut blobs = Vec::with_capacity(self.attachments.len());
        for up in self.attachments {
            blobs.push(base64::engine::general_purpose::STANDARD.decode(up.content.as_bytes())?);
            attachments.push(Attachment {
                filename: up.filename,
                media_type: up.media_type,
                size_bytes: up.size_bytes,
                digest: up.digest,
            });
        }
        let comment = NewComment {
            author: self.author,
            created_at: self.created_at,
            text: self.text,
            origin: self.origin,
            attachments,
        };
        Ok((comment, blobs))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Sor(SorPayload),
    Eor(EorPayload),
    Mrs(MrsMessage),
    Is(IsInfo),
    Comment(CommentPayload),
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Sor(_) => Kind::Sor,
            Payload::Eor(_) => Kind::Eor,
            Payload::Mrs(_) => Kind::Mrs,
            Payload::Is(_) => Kind::Is,
            Payload::Comment(_) => Kind::Comment,
        }
    }
}

/// One unit of the acquisition wire protocol.
///
/// The kind is derived from the payload variant, so kind/payload agreement
/// holds for every constructed value.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageEnvelope {
    pub partition: String,
    pub seq: u64,
    pub timestamp: Timestamp,
    pub payload: Payload,
}

impl MessageEnvelope {
    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }

    /// Canonical single-line JSON form (no trailing newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("envelope serialization is infallible")
    }
}

impl Serialize for MessageEnvelope {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("MessageEnvelope", 6)?;
        s.serialize_field("version", &PROTOCOL_VERSION)?;
        s.serialize_field("kind", &self.kind())?;
        s.serialize_field("partition", &self.partition)?;
        s.serialize_field("seq", &self.seq)?;
        s.serialize_field("timestamp", &self.timestamp)?;
        match &self.payload {
            Payload::Sor(p) => s.serialize_field("payload", p)?,
            Payload::Eor(p) => s.serialize_field("payload", p)?,
            Payload::Mrs(p) => s.serialize_field("payload", p)?,
            Payload::Is(p) => s.serialize_field("payload", p)?,
            Payload::Comment(p) => s.serialize_field("payload", p)?,
        }
        s.end()
    }
}
