//! Read-side API over a repository: run search, run detail, IS parameter
//! search and a header cursor. Nothing here mutates the repository.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{fold_case, RunHeader, RunStatus, Scalar, ScalarType, SearchCriteria, SortDir, SortKey, Timestamp};
use crate::storage::{Backend, Result, RunDetail};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("invalid criteria: {0}")]
    InvalidCriteria(String),
    #[error("operator {op} cannot be applied to a {ty} value")]
    TypeMismatch { op: PredicateOp, ty: ScalarType },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredicateOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "contains")]
    Contains,
}

impl PredicateOp {
    pub fn as_str(self) -> &'static str {
        match self {
            PredicateOp::Eq => "=",
            PredicateOp::Lt => "<",
            PredicateOp::Gt => ">",
            PredicateOp::Contains => "contains",
        }
    }

    /// Whether the operator is defined for values of type `ty`.
    pub fn accepts(self, ty: ScalarType) -> bool {
        match self {
            PredicateOp::Eq => true,
            PredicateOp::Lt | PredicateOp::Gt => {
                matches!(ty, ScalarType::Int | ScalarType::Float | ScalarType::Time)
            }
            PredicateOp::Contains => ty == ScalarType::Str,
        }
    }
}

impl fmt::Display for PredicateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredicateOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "=" | "eq" => Ok(PredicateOp::Eq),
            "<" | "lt" => Ok(PredicateOp::Lt),
            ">" | "gt" => Ok(PredicateOp::Gt),
            "contains" => Ok(PredicateOp::Contains),
            other => Err(format!("unknown operator {other:?} (expected =, <, > or contains)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub op: PredicateOp,
    pub value: Scalar,
}

impl Predicate {
    pub fn new(op: PredicateOp, value: Scalar) -> Result<Self, QueryError> {
        let ty = value.scalar_type();
        if op.accepts(ty) {
            Ok(Predicate { op, value })
        } else {
            Err(QueryError::TypeMismatch { op, ty })
        }
    }

    /// Evaluates the predicate against a stored value. Values of a
    /// different type never match.
    pub fn matches(&self, stored: &Scalar) -> bool {
        if stored.scalar_type() != self.value.scalar_type() {
            return false;
        }
        match self.op {
            PredicateOp::Eq => stored == &self.value,
            PredicateOp::Lt => compare(stored, &self.value) == Some(Ordering::Less),
            PredicateOp::Gt => compare(stored, &self.value) == Some(Ordering::Greater),
            PredicateOp::Contains => match (stored, &self.value) {
                (Scalar::Str(s), Scalar::Str(needle)) => s.contains(needle.as_str()),
                _ => false,
            },
        }
    }
}

fn compare(a: &Scalar, b: &Scalar) -> Option<Ordering> {
    match (a, b) {
        (Scalar::Int(x), Scalar::Int(y)) => Some(x.cmp(y)),
        (Scalar::Float(x), Scalar::Float(y)) => x.partial_cmp(y),
        (Scalar::Time(x), Scalar::Time(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

/// Search for occurrences of one IS class parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct IsQuery {
    pub partition: Option<String>,
    pub class_name: String,
    pub parameter_name: String,
    pub predicate: Option<Predicate>,
}

impl IsQuery {
    pub fn new(class_name: impl Into<String>, parameter_name: impl Into<String>) -> Self {
        IsQuery {
            partition: None,
            class_name: class_name.into(),
            parameter_name: parameter_name.into(),
            predicate: None,
        }
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.class_name.is_empty() {
            return Err(QueryError::InvalidCriteria("class_name must not be empty".into()));
        }
        if self.parameter_name.is_empty() {
            return Err(QueryError::InvalidCriteria("parameter_name must not be empty".into()));
        }
        if let Some(p) = &self.predicate {
            let ty = p.value.scalar_type();
            if !p.op.accepts(ty) {
                return Err(QueryError::TypeMismatch { op: p.op, ty });
            }
        }
        Ok(())
    }
}

/// One matching attribute occurrence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsMatch {
    pub partition: String,
    pub run_number: u64,
    pub object_name: String,
    pub timestamp: Timestamp,
    pub value: crate::model::Attribute,
    pub record_id: u64,
}

/// Whether `h` satisfies every present criterion.
pub fn header_matches(h: &RunHeader, c: &SearchCriteria, include_open: bool) -> bool {
    if h.status == RunStatus::Open && !include_open {
        return false;
    }
    if let Some(status) = c.status {
        if h.status != RunStatus::from(status) {
            return false;
        }
    }
    if c.max_events_at_most.is_some_and(|bound| h.max_events > bound) {
        return false;
    }
    if c.start_from.is_some_and(|t| h.start_time < t) || c.start_to.is_some_and(|t| h.start_time > t) {
        return false;
    }
    if let Some(beam) = &c.beam_type {
        if fold_case(&h.beam_type) != fold_case(beam) {
            return false;
        }
    }
    if c.trigger_type.as_ref().is_some_and(|t| *t != h.trigger_type) {
        return false;
    }
    true
}

/// Comparator implementing the criteria's sort order with the
/// `(partition, run_number)` ascending tie-break.
pub fn compare_headers(a: &RunHeader, b: &RunHeader, key: SortKey, dir: SortDir) -> Ordering {
    let primary = match key {
        SortKey::RunNumber => a.run_number.cmp(&b.run_number),
        SortKey::StartTime => a.start_time.cmp(&b.start_time),
        SortKey::NumEvents => a.num_events.cmp(&b.num_events),
    };
    let primary = match dir {
        SortDir::Asc => primary,
        SortDir::Desc => primary.reverse(),
    };
    primary.then_with(|| a.key().cmp(&b.key()))
}

pub fn filter_and_sort(headers: Vec<RunHeader>, c: &SearchCriteria, include_open: bool) -> Vec<RunHeader> {
    let mut out: Vec<_> = headers
        .into_iter()
        .filter(|h| header_matches(h, c, include_open))
        .collect();
    out.sort_by(|a, b| compare_headers(a, b, c.sort_key, c.sort_dir));
    out
}

/// Appends the matches of `query` found in one run to `out`.
pub fn collect_is_matches(detail: &RunDetail, query: &IsQuery, out: &mut Vec<IsMatch>) {
    for r in &detail.is {
        if r.info.class_name != query.class_name {
            continue;
        }
        let Some(attr) = r.info.attribute(&query.parameter_name) else {
            continue;
        };
        if query.predicate.as_ref().is_some_and(|p| !p.matches(&attr.value)) {
            continue;
        }
        out.push(IsMatch {
            partition: detail.header.partition.clone(),
            run_number: detail.header.run_number,
            object_name: r.info.object_name.clone(),
            timestamp: r.info.timestamp,
            value: attr.clone(),
            record_id: r.record_id,
        });
    }
}

/// Orders matches by `(partition, run_number, timestamp, record_id)`.
pub fn sort_is_matches(matches: &mut [IsMatch]) {
    matches.sort_by(|a, b| {
        (&a.partition, a.run_number, a.timestamp, a.record_id)
            .cmp(&(&b.partition, b.run_number, b.timestamp, b.record_id))
    });
}

/// Runs matching `criteria`, sorted as requested. Open runs are only
/// returned when `include_open` is set.
pub fn find_runs(backend: &dyn Backend, criteria: &SearchCriteria, include_open: bool) -> Result<Vec<RunHeader>> {
    backend.find_runs(criteria, include_open)
}

pub fn get_run(backend: &dyn Backend, partition: &str, run_number: u64) -> Result<RunDetail> {
    backend.get_run_detail(partition, run_number)
}

pub fn find_is_instances(backend: &dyn Backend, query: &IsQuery) -> Result<Vec<IsMatch>> {
    backend.find_is_instances(query)
}

/// Sequential cursor over the run headers of one partition in run number
/// order. The header list is read on the first call to `next`.
pub struct HeaderCursor<'a> {
    backend: &'a dyn Backend,
    partition: String,
    buffer: std::vec::IntoIter<RunHeader>,
    loaded: bool,
}

pub fn iterate_run_headers<'a>(backend: &'a dyn Backend, partition: &str) -> HeaderCursor<'a> {
    HeaderCursor {
        backend,
        partition: partition.to_owned(),
        buffer: Vec::new().into_iter(),
        loaded: false,
    }
}

impl Iterator for HeaderCursor<'_> {
    type Item = Result<RunHeader>;

    fn next(&mut self) -> Option<Self::Item> {
        if !self.loaded {
            self.loaded = true;
            match self.backend.list_run_headers(Some(&self.partition)) {
                Ok(headers) => self.buffer = headers.into_iter(),
                Err(e) => return Some(Err(e)),
            }
        }
        self.buffer.next().map(Ok)
    }
}
