use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::model::{
    is_valid_partition, CommentPayload, EorPayload, IsInfo, Kind, MessageEnvelope, MrsMessage,
    Payload, SorPayload, Timestamp, MAX_COUNT, PROTOCOL_VERSION,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("unknown kind {0:?}")]
    UnknownKind(String),
    #[error("unsupported protocol version {0} (expected 1)")]
    VersionMismatch(String),
    #[error("field {field}: {detail}")]
    PayloadSchemaError { field: String, detail: String },
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::MalformedJson(_) => "MALFORMED_JSON",
            ParseError::UnknownKind(_) => "UNKNOWN_KIND",
            ParseError::VersionMismatch(_) => "VERSION_MISMATCH",
            ParseError::PayloadSchemaError { .. } => "PAYLOAD_SCHEMA",
        }
    }

    /// The field this error is about.
    pub fn field(&self) -> &str {
        match self {
            ParseError::MalformedJson(_) => "",
            ParseError::UnknownKind(_) => "kind",
            ParseError::VersionMismatch(_) => "version",
            ParseError::PayloadSchemaError { field, .. } => field,
        }
    }
}

fn schema(field: impl Into<String>, detail: impl Into<String>) -> ParseError {
    ParseError::PayloadSchemaError {
        field: field.into(),
        detail: detail.into(),
    }
}

const FIELDS: [&str; 6] = ["version", "kind", "partition", "seq", "timestamp", "payload"];

fn take<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a Value, ParseError> {
    obj.get(field).ok_or_else(|| schema(field, "missing"))
}

fn payload<T: DeserializeOwned>(value: &Value) -> Result<T, ParseError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "payload".to_owned() } else { format!("payload.{path}") };
        schema(field, e.into_inner().to_string())
    })
}

/// Parses and fully validates one protocol line (without its newline).
pub fn parse_envelope(line: &[u8]) -> Result<MessageEnvelope, ParseError> {
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    let text = std::str::from_utf8(line).map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    let value: Value = serde_json::from_str(text).map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(ParseError::MalformedJson("expected a JSON object".into()));
    };

    let version = take(&obj, "version")?;
    if version.as_u64() != Some(PROTOCOL_VERSION) {
        return Err(ParseError::VersionMismatch(version.to_string()));
    }
    let kind = match take(&obj, "kind")? {
        Value::String(s) => s.parse::<Kind>().map_err(|_| ParseError::UnknownKind(s.clone()))?,
        other => return Err(ParseError::UnknownKind(other.to_string())),
    };
    if let Some(extra) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(schema(extra.as_str(), "unknown field"));
    }
    let partition = take(&obj, "partition")?
        .as_str()
        .filter(|p| is_valid_partition(p))
        .ok_or_else(|| schema("partition", "expected a valid partition name"))?
        .to_owned();
    let seq = take(&obj, "seq")?
        .as_u64()
        .filter(|&s| s > 0 && s <= MAX_COUNT)
        .ok_or_else(|| schema("seq", "expected a positive integer"))?;
    let timestamp = take(&obj, "timestamp")?
        .as_str()
        .and_then(|s| s.parse::<Timestamp>().ok())
        .ok_or_else(|| schema("timestamp", "expected an ISO-8601 UTC timestamp with milliseconds"))?;

    let body = take(&obj, "payload")?;
    let payload = match kind {
        Kind::Sor => {
            let p: SorPayload = payload(body)?;
            if p.run_number == 0 || p.run_number > MAX_COUNT {
                return Err(schema("payload.run_number", "expected a positive integer"));
            }
            if p.max_events > MAX_COUNT {
                return Err(schema("payload.max_events", "out of range"));
            }
            Payload::Sor(p)
        }
        Kind::Eor => {
            let p: EorPayload = payload(body)?;
            if p.num_events > MAX_COUNT {
                return Err(schema("payload.num_events", "out of range"));
            }
            Payload::Eor(p)
        }
        Kind::Mrs => Payload::Mrs(payload::<MrsMessage>(body)?),
        Kind::Is => {
            let p: IsInfo = payload(body)?;
            if let Some(a) = p.attributes.iter().find(|a| !crate::model::is_valid_name(&a.name)) {
                return Err(schema("payload.attributes", format!("invalid attribute name {:?}", a.name)));
            }
            if let Some(name) = p.duplicate_attribute() {
                return Err(schema("payload.attributes", format!("duplicate attribute {name:?}")));
            }
            Payload::Is(p)
        }
        Kind::Comment => {
            let p: CommentPayload = payload(body)?;
            let (comment, _) = p.clone().into_parts().map_err(|e| {
                schema("payload.attachments.content", format!("invalid base64: {e}"))
            })?;
            comment
                .validate()
                .map_err(|e| schema("payload", e.to_string()))?;
            Payload::Comment(p)
        }
    };
    Ok(MessageEnvelope {
        partition,
        seq,
        timestamp,
        payload,
    })
}

/// Best-effort sequence number of a line that failed to parse, for the
/// `err` reply; 0 when none can be recovered.
pub(crate) fn salvage_seq(line: &[u8]) -> u64 {
    serde_json::from_slice::<Value>(line)
        .ok()
        .and_then(|v| v.get("seq").and_then(Value::as_u64))
        .unwrap_or(0)
}
