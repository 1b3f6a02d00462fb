use std::path::PathBuf;

use anyhow::Context;
use obk_core::model::{ClosedStatus, Scalar, ScalarType, SearchCriteria, SortDir, SortKey, Timestamp, TriggerType};
use obk_core::query::{find_is_instances, find_runs, get_run, IsQuery, Predicate, PredicateOp};

use crate::output::{run_row, write, write_json_lines, Format, RUN_COLUMNS};

#[derive(clap::Subcommand)]
pub enum Command {
    /// Runs matching all given criteria.
    Runs(RunsArgs),
    /// Occurrences of an IS class parameter, optionally filtered by value.
    Is(IsArgs),
    /// Everything stored for one run.
    Run(RunArgs),
}

#[derive(clap::Args)]
pub struct RunsArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    status: Option<ClosedStatus>,
    #[arg(long)]
    beam_type: Option<String>,
    #[arg(long)]
    trigger_type: Option<String>,
    /// Only runs configured for at most this many events.
    #[arg(long)]
    max_events: Option<u64>,
    #[arg(long, value_parser = crate::parse_timestamp)]
    start_from: Option<Timestamp>,
    #[arg(long, value_parser = crate::parse_timestamp)]
    start_to: Option<Timestamp>,
    #[arg(long, default_value = "RunNumber")]
    sort: SortKey,
    #[arg(long, default_value = "Desc")]
    dir: SortDir,
    /// Also list runs that are still open.
    #[arg(long)]
    include_open: bool,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(clap::Args)]
pub struct IsArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    class: String,
    #[arg(long)]
    param: String,
    #[arg(long)]
    partition: Option<String>,
    /// Value predicate: an operator (=, <, >, contains) and a value.
    #[arg(long = "where", num_args = 2, value_names = ["OP", "VALUE"])]
    predicate: Option<Vec<String>>,
    /// Type of the predicate value (int, float, bool, str, time); inferred when omitted.
    #[arg(long = "type")]
    value_type: Option<String>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    partition: String,
    #[arg(long)]
    run: u64,
}

pub fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Runs(a) => runs(a),
        Command::Is(a) => is(a),
        Command::Run(a) => {
            let repo = crate::open_repo(&a.root, false)?;
            let detail = get_run(&*repo, &a.partition, a.run)?;
            println!("{}", serde_json::to_string_pretty(&detail)?);
            Ok(())
        }
    }
}

fn runs(a: RunsArgs) -> anyhow::Result<()> {
    let criteria = SearchCriteria {
        status: a.status,
        max_events_at_most: a.max_events,
        start_from: a.start_from,
        start_to: a.start_to,
        beam_type: a.beam_type,
        trigger_type: a.trigger_type.as_deref().map(TriggerType::new),
        sort_key: a.sort,
        sort_dir: a.dir,
    };
    let repo = crate::open_repo(&a.root, false)?;
    let headers = find_runs(&*repo, &criteria, a.include_open)?;
    let rows: Vec<Vec<String>> = headers.iter().map(run_row).collect();
    write(a.format, &RUN_COLUMNS, &rows, |out| write_json_lines(&mut { out }, &headers))
}

/// Reads `text` as the first of int, float, bool, time that fits, else str.
fn infer_scalar(text: &str) -> Scalar {
    [ScalarType::Int, ScalarType::Float, ScalarType::Bool, ScalarType::Time]
        .into_iter()
        .find_map(|ty| Scalar::from_text(ty, text).ok())
        .unwrap_or_else(|| Scalar::Str(text.to_owned()))
}

fn is(a: IsArgs) -> anyhow::Result<()> {
    let mut query = IsQuery::new(a.class, a.param);
    query.partition = a.partition;
    if let Some(p) = &a.predicate {
        let op: PredicateOp = p[0].parse().map_err(anyhow::Error::msg)?;
        let value = match &a.value_type {
            Some(t) => {
                let ty = ScalarType::parse(t).with_context(|| format!("unknown value type {t:?}"))?;
                Scalar::from_text(ty, &p[1])?
            }
            None => infer_scalar(&p[1]),
        };
        query.predicate = Some(Predicate::new(op, value)?);
    } else if a.value_type.is_some() {
        anyhow::bail!("--type needs --where");
    }
    let repo = crate::open_repo(&a.root, false)?;
    let matches = find_is_instances(&*repo, &query)?;
    let rows: Vec<Vec<String>> = matches
        .iter()
        .map(|m| {
            vec![
                m.partition.clone(),
                m.run_number.to_string(),
                m.object_name.clone(),
                m.timestamp.to_string(),
                m.value.value.to_text(),
                m.record_id.to_string(),
            ]
        })
        .collect();
    write(a.format, &["Partition", "Run", "Object", "Time", "Value", "Record"], &rows, |out| {
        write_json_lines(&mut { out }, &matches)
    })
}
