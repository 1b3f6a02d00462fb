use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ClosedStatus, Timestamp, TriggerType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SortKey {
    #[default]
    RunNumber,
    StartTime,
    NumEvents,
}

impl SortKey {
    pub fn as_str(self) -> &'static str {
        match self {
            SortKey::RunNumber => "RunNumber",
            SortKey::StartTime => "StartTime",
            SortKey::NumEvents => "NumEvents",
        }
    }
}

impl FromStr for SortKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "RunNumber" | "run_number" => Ok(SortKey::RunNumber),
            "StartTime" | "start_time" => Ok(SortKey::StartTime),
            "NumEvents" | "num_events" => Ok(SortKey::NumEvents),
            other => Err(format!("unknown sort key {other:?}")),
        }
    }
}

impl fmt::Display for SortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SortDir {
    Asc,
    #[default]
    Desc,
}

impl SortDir {
    pub fn as_str(self) -> &'static str {
        match self {
            SortDir::Asc => "Asc",
            SortDir::Desc => "Desc",
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            SortDir::Asc => SortDir::Desc,
            SortDir::Desc => SortDir::Asc,
        }
    }
}

impl FromStr for SortDir {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Asc" | "asc" => Ok(SortDir::Asc),
            "Desc" | "desc" => Ok(SortDir::Desc),
            other => Err(format!("unknown sort direction {other:?}")),
        }
    }
}

/// Conjunctive run filter plus sort order, mirroring the logbook search form.
///
/// Every present field must hold for a run to match. The default value is
/// the empty search: all closed runs, newest run number first.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchCriteria {
    pub status: Option<ClosedStatus>,
    /// Matches runs whose configured `max_events` is at most this bound.
    pub max_events_at_most: Option<u64>,
    /// Inclusive lower bound on `start_time`.
    pub start_from: Option<Timestamp>,
    /// Inclusive upper bound on `start_time`.
    pub start_to: Option<Timestamp>,
    /// Compared case-insensitively against the whole beam type.
    pub beam_type: Option<String>,
    pub trigger_type: Option<TriggerType>,
    #[serde(default)]
    pub sort_key: SortKey,
    #[serde(default)]
    pub sort_dir: SortDir,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("start_from {from} is after start_to {to}")]
pub struct InvertedRange {
    pub from: Timestamp,
    pub to: Timestamp,
}

impl SearchCriteria {
    pub fn validate(&self) -> Result<(), InvertedRange> {
        match (self.start_from, self.start_to) {
            (Some(from), Some(to)) if from > to => Err(InvertedRange { from, to }),
            _ => Ok(()),
        }
    }
}

/// Case folding used for beam type comparison, shared by every backend.
pub fn fold_case(s: &str) -> String {
    s.to_lowercase()
}
