use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Timestamp;

/// Upper bound for run numbers and event counts; every backend must be able
/// to store them as signed 64-bit integers.
pub const MAX_COUNT: u64 = i64::MAX as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RunStatus {
    Open,
    Good,
    Bad,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Open => "Open",
            RunStatus::Good => "Good",
            RunStatus::Bad => "Bad",
        }
    }

    pub fn is_closed(self) -> bool {
        self != RunStatus::Open
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Open" => Ok(RunStatus::Open),
            "Good" => Ok(RunStatus::Good),
            "Bad" => Ok(RunStatus::Bad),
            other => Err(format!("unknown run status {other:?}")),
        }
    }
}

/// Final status carried by an end-of-run; `Open` is not a valid outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClosedStatus {
    Good,
    Bad,
}

impl From<ClosedStatus> for RunStatus {
    fn from(s: ClosedStatus) -> Self {
        match s {
            ClosedStatus::Good => RunStatus::Good,
            ClosedStatus::Bad => RunStatus::Bad,
        }
    }
}

impl FromStr for ClosedStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Good" => Ok(ClosedStatus::Good),
            "Bad" => Ok(ClosedStatus::Bad),
            other => Err(format!("status must be Good or Bad, got {other:?}")),
        }
    }
}

/// Trigger type of a run. Names other than the three well-known ones are
/// kept verbatim in `Other`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TriggerType {
    Cosmic,
    Calibration,
    Physics,
    Other(String),
}

impl TriggerType {
    pub fn new(name: &str) -> Self {
        match name {
            "Cosmic" => TriggerType::Cosmic,
            "Calibration" => TriggerType::Calibration,
            "Physics" => TriggerType::Physics,
            other => TriggerType::Other(other.to_owned()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            TriggerType::Cosmic => "Cosmic",
            TriggerType::Calibration => "Calibration",
            TriggerType::Physics => "Physics",
            TriggerType::Other(s) => s,
        }
    }
}

impl fmt::Display for TriggerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for TriggerType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TriggerType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(TriggerType::new(&String::deserialize(deserializer)?))
    }
}

/// Opaque 32-bit set of participating subdetectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DetectorMask(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid detector mask {0:?}: expected 0x followed by 8 hex digits")]
pub struct DetectorMaskError(pub String);

/// Formats a mask as `0x` plus 8 lowercase hex digits.
pub fn detector_mask_format(mask: DetectorMask) -> String {
    format!("0x{:08x}", mask.0)
}

pub fn detector_mask_parse(s: &str) -> Result<DetectorMask, DetectorMaskError> {
    let digits = s
        .strip_prefix("0x")
        .filter(|d| d.len() == 8 && d.bytes().all(|b| b.is_ascii_hexdigit()))
        .ok_or_else(|| DetectorMaskError(s.to_owned()))?;
    u32::from_str_radix(digits, 16)
        .map(DetectorMask)
        .map_err(|_| DetectorMaskError(s.to_owned()))
}

impl fmt::Display for DetectorMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&detector_mask_format(*self))
    }
}

impl FromStr for DetectorMask {
    type Err = DetectorMaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        detector_mask_parse(s)
    }
}

impl Serialize for DetectorMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DetectorMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        detector_mask_parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Per-run summary record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunHeader {
    pub partition: String,
    pub run_number: u64,
    pub start_time: Timestamp,
    pub end_time: Option<Timestamp>,
    pub status: RunStatus,
    pub num_events: u64,
    pub max_events: u64,
    pub trigger_type: TriggerType,
    pub beam_type: String,
    pub detector_mask: DetectorMask,
}

impl RunHeader {
    /// A freshly started run: status `Open`, no end time, zero events.
    pub fn open(
        partition: impl Into<String>,
        run_number: u64,
        start_time: Timestamp,
        max_events: u64,
        trigger_type: TriggerType,
        beam_type: impl Into<String>,
        detector_mask: DetectorMask,
    ) -> Self {
        RunHeader {
            partition: partition.into(),
            run_number,
            start_time,
            end_time: None,
            status: RunStatus::Open,
            num_events: 0,
            max_events,
            trigger_type,
            beam_type: beam_type.into(),
            detector_mask,
        }
    }

    /// Key used by all ordering rules: ascending partition, then run number.
    pub fn key(&self) -> (&str, u64) {
        (&self.partition, self.run_number)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeaderViolation {
    InvalidPartition,
    ZeroRunNumber,
    CountOutOfRange,
    ClosedWithoutEndTime,
    OpenWithEndTime,
    EndBeforeStart,
}

impl HeaderViolation {
    pub fn code(self) -> &'static str {
        match self {
            HeaderViolation::InvalidPartition => "invalid-partition",
            HeaderViolation::ZeroRunNumber => "zero-run-number",
            HeaderViolation::CountOutOfRange => "count-out-of-range",
            HeaderViolation::ClosedWithoutEndTime => "closed-without-end-time",
            HeaderViolation::OpenWithEndTime => "open-with-end-time",
            HeaderViolation::EndBeforeStart => "end-before-start",
        }
    }
}

impl fmt::Display for HeaderViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Partition names double as directory names in the file store, so they
/// must be a single safe path component.
pub fn is_valid_partition(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && name != "."
        && name != ".."
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| !c.is_control() && !matches!(c, '/' | '\\' | ':' | '*' | '?' | '"' | '<' | '>' | '|'))
}

/// Returns every violated header invariant; an empty list means valid.
pub fn validate_header(h: &RunHeader) -> Vec<HeaderViolation> {
    let mut out = Vec::new();
    if !is_valid_partition(&h.partition) {
        out.push(HeaderViolation::InvalidPartition);
    }
    if h.run_number == 0 {
        out.push(HeaderViolation::ZeroRunNumber);
    }
    if h.run_number > MAX_COUNT || h.num_events > MAX_COUNT || h.max_events > MAX_COUNT {
        out.push(HeaderViolation::CountOutOfRange);
    }
    match (h.status, h.end_time) {
        (RunStatus::Open, Some(_)) => out.push(HeaderViolation::OpenWithEndTime),
        (RunStatus::Good | RunStatus::Bad, None) => out.push(HeaderViolation::ClosedWithoutEndTime),
        _ => {}
    }
    if let Some(end) = h.end_time {
        if end < h.start_time {
            out.push(HeaderViolation::EndBeforeStart);
        }
    }
    out
}
