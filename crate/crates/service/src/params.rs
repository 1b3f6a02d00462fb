use std::collections::HashSet;

use obk_core::model::{ClosedStatus, SearchCriteria, SortDir, SortKey, Timestamp, TriggerType};

use crate::error::ApiError;

/// Decoded `GET /runs` query string.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunsQuery {
    pub criteria: SearchCriteria,
    pub include_open: bool,
}

pub const RUNS_PARAMS: [&str; 9] = [
    "status",
    "beam_type",
    "trigger_type",
    "max_events",
    "start_from",
    "start_to",
    "sort",
    "dir",
    "include_open",
];

/// Parses the run search parameters. Unknown or repeated parameters and
/// unparsable values are rejected naming the parameter; empty values mean
/// "not set".
pub fn parse_runs_query(pairs: &[(String, String)]) -> Result<RunsQuery, ApiError> {
    let mut seen = HashSet::new();
    let mut q = RunsQuery::default();
    for (key, value) in pairs {
        if !RUNS_PARAMS.contains(&key.as_str()) {
            return Err(ApiError::bad_field(key, format!("unknown parameter {key:?}")));
        }
        if !seen.insert(key.as_str()) {
            return Err(ApiError::bad_field(key, format!("parameter {key:?} given more than once")));
        }
        if value.is_empty() {
            continue;
        }
        let c = &mut q.criteria;
        match key.as_str() {
            "status" => {
                c.status = Some(match value.as_str() {
                    "Good" => ClosedStatus::Good,
                    "Bad" => ClosedStatus::Bad,
                    _ => return Err(ApiError::bad_field(key, "expected Good or Bad")),
                })
            }
            "beam_type" => c.beam_type = Some(value.clone()),
            "trigger_type" => c.trigger_type = Some(TriggerType::new(value)),
            "max_events" => {
                c.max_events_at_most = Some(
                    value
                        .parse()
                        .map_err(|_| ApiError::bad_field(key, "expected a non-negative integer"))?,
                )
            }
            "start_from" | "start_to" => {
                let t: Timestamp = value
                    .parse()
                    .map_err(|_| ApiError::bad_field(key, "expected an ISO-8601 UTC timestamp with milliseconds"))?;
                if key == "start_from" {
                    c.start_from = Some(t);
                } else {
                    c.start_to = Some(t);
                }
            }
            "sort" => {
                c.sort_key = value
                    .parse::<SortKey>()
                    .map_err(|_| ApiError::bad_field(key, "expected RunNumber, StartTime or NumEvents"))?
            }
            "dir" => c.sort_dir = value.parse::<SortDir>().map_err(|_| ApiError::bad_field(key, "expected Asc or Desc"))?,
            "include_open" => {
                q.include_open = match value.as_str() {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(ApiError::bad_field(key, "expected true or false")),
                }
            }
            _ => unreachable!("checked against RUNS_PARAMS"),
        }
    }
    if let Err(e) = q.criteria.validate() {
        return Err(ApiError::bad_field("start_to", e.to_string()));
    }
    Ok(q)
}

/// Inverse of [`parse_runs_query`]: the parameters a client sends for
/// `criteria`, omitting defaults.
pub fn encode_runs_query(criteria: &SearchCriteria, include_open: bool) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    if let Some(s) = criteria.status {
        out.push(("status", obk_core::model::RunStatus::from(s).as_str().to_owned()));
    }
    if let Some(b) = &criteria.beam_type {
        out.push(("beam_type", b.clone()));
    }
    if let Some(t) = &criteria.trigger_type {
        out.push(("trigger_type", t.to_string()));
    }
    if let Some(m) = criteria.max_events_at_most {
        out.push(("max_events", m.to_string()));
    }
    if let Some(t) = criteria.start_from {
        out.push(("start_from", t.to_string()));
    }
    if let Some(t) = criteria.start_to {
        out.push(("start_to", t.to_string()));
    }
    if criteria.sort_key != SortKey::default() {
        out.push(("sort", criteria.sort_key.as_str().to_owned()));
    }
    if criteria.sort_dir != SortDir::default() {
        out.push(("dir", criteria.sort_dir.as_str().to_owned()));
    }
    if include_open {
        out.push(("include_open", "true".to_owned()));
    }
    out
}
