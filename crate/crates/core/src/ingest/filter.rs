use std::collections::BTreeSet;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::{Kind, MessageEnvelope, Payload, Severity};

/// Which partitions a filter admits.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum PartitionSet {
    #[default]
    Any,
    Only(BTreeSet<String>),
}

impl PartitionSet {
    pub fn contains(&self, partition: &str) -> bool {
        match self {
            PartitionSet::Any => true,
            PartitionSet::Only(set) => set.contains(partition),
        }
    }
}

// Encoded as "*" or a list of names.
impl Serialize for PartitionSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            PartitionSet::Any => serializer.serialize_str("*"),
            PartitionSet::Only(set) => set.serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for PartitionSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Wildcard(String),
            List(BTreeSet<String>),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Wildcard(s) if s == "*" => Ok(PartitionSet::Any),
            Repr::Wildcard(s) => Err(serde::de::Error::custom(format!(
                "expected \"*\" or a list of partitions, got {s:?}"
            ))),
            Repr::List(set) => Ok(PartitionSet::Only(set)),
        }
    }
}

/// Selects which envelopes the acquisition server accepts.
///
/// JSON form (every field optional; the default accepts everything):
///
/// ```json
/// {"partitions": ["TB"], "kinds": ["SOR", "EOR", "MRS"], "min_severity": "Error", "is_servers": ["DF"]}
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriptionFilter {
    #[serde(default)]
    pub partitions: PartitionSet,
    #[serde(default = "all_kinds")]
    pub kinds: BTreeSet<Kind>,
    /// Only applies to MRS envelopes.
    #[serde(default)]
    pub min_severity: Option<Severity>,
    /// Only applies to IS envelopes.
    #[serde(default)]
    pub is_servers: Option<BTreeSet<String>>,
}

fn all_kinds() -> BTreeSet<Kind> {
    Kind::ALL.into_iter().collect()
}

impl Default for SubscriptionFilter {
    fn default() -> Self {
        SubscriptionFilter {
            partitions: PartitionSet::Any,
            kinds: all_kinds(),
            min_severity: None,
            is_servers: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("invalid filter: {0}")]
    Json(#[from] serde_json::Error),
    #[error("a filter must admit at least one kind")]
    NoKinds,
}

impl SubscriptionFilter {
    pub fn from_json(text: &str) -> Result<Self, FilterError> {
        let f: SubscriptionFilter = serde_json::from_str(text)?;
        if f.kinds.is_empty() {
            return Err(FilterError::NoKinds);
        }
        Ok(f)
    }
}

/// True iff the envelope's partition and kind are admitted and the
/// kind-specific constraint (MRS severity, IS server) holds.
pub fn filter_accepts(f: &SubscriptionFilter, e: &MessageEnvelope) -> bool {
    if !f.partitions.contains(&e.partition) || !f.kinds.contains(&e.kind()) {
        return false;
    }
    match &e.payload {
        Payload::Mrs(m) => f.min_severity.is_none_or(|min| m.severity >= min),
        Payload::Is(i) => f.is_servers.as_ref().is_none_or(|s| s.contains(&i.server)),
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IsInfo, MrsMessage, Timestamp};

    fn env(partition: &str, payload: Payload) -> MessageEnvelope {
        MessageEnvelope {
            partition: partition.into(),
            seq: 1,
            timestamp: Timestamp::from_millis(0).unwrap(),
            payload,
        }
    }

    fn mrs(severity: Severity) -> Payload {
        Payload::Mrs(MrsMessage {
            message_name: "m".into(),
            severity,
            application: "a".into(),
            text: String::new(),
            timestamp: Timestamp::from_millis(0).unwrap(),
            qualifiers: vec![],
        })
    }

    fn is(server: &str) -> Payload {
        Payload::Is(IsInfo {
            server: server.into(),
            object_name: "o".into(),
            class_name: "c".into(),
            attributes: vec![],
            timestamp: Timestamp::from_millis(0).unwrap(),
        })
    }

    #[test]
    fn json_forms() {
        let f = SubscriptionFilter::from_json("{}").unwrap();
        assert_eq!(f, SubscriptionFilter::default());
        let f = SubscriptionFilter::from_json(
            r#"{"partitions":["TB"],"kinds":["MRS","IS"],"min_severity":"Error","is_servers":["DF"]}"#,
        )
        .unwrap();
        assert!(f.partitions.contains("TB") && !f.partitions.contains("LAr"));
        assert!(SubscriptionFilter::from_json(r#"{"kinds":[]}"#).is_err());
        assert!(SubscriptionFilter::from_json(r#"{"partitions":"TB"}"#).is_err());
        assert!(SubscriptionFilter::from_json(r#"{"partitions":"*"}"#).is_ok());
    }

    #[test]
    fn thresholds() {
        let f = SubscriptionFilter {
            kinds: [Kind::Mrs].into(),
            min_severity: Some(Severity::Error),
            ..Default::default()
        };
        assert!(!filter_accepts(&f, &env("TB", mrs(Severity::Warning))));
        assert!(filter_accepts(&f, &env("TB", mrs(Severity::Fatal))));
        assert!(!filter_accepts(&f, &env("TB", is("DF"))));

        let f = SubscriptionFilter {
            kinds: [Kind::Is].into(),
            is_servers: Some(["DF".to_owned()].into()),
            ..Default::default()
        };
        assert!(!filter_accepts(&f, &env("TB", is("RunParams"))));
        assert!(filter_accepts(&f, &env("TB", is("DF"))));
        assert!(filter_accepts(&SubscriptionFilter::default(), &env("X", is("Y"))));
    }
}
