use std::path::PathBuf;

use anyhow::{bail, Context};
use obk_core::model::{Attachment, CommentOrigin, NewComment, RunHeader, RunStatus, Timestamp};
use obk_core::storage::RunDetail;

#[derive(clap::Args)]
#[command(group = clap::ArgGroup::new("target").required(true).args(["root", "server"]))]
pub struct Args {
    /// Write directly to this repository (offline mode).
    #[arg(long)]
    root: Option<PathBuf>,
    /// Post through the logbook service at this URL (online mode).
    #[arg(long, env = "OBK_SERVER")]
    server: Option<String>,
    /// Bearer token for online mode.
    #[arg(long, env = "OBK_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(long)]
    partition: String,
    #[arg(long)]
    run: u64,
    /// Comment author; in online mode it must match the token's account.
    #[arg(long)]
    author: Option<String>,
    #[arg(long, default_value = "")]
    text: String,
    /// File to attach; may be repeated.
    #[arg(long = "attach")]
    attach: Vec<PathBuf>,
}

struct File {
    name: String,
    media_type: String,
    data: Vec<u8>,
}

fn read_attachments(paths: &[PathBuf]) -> anyhow::Result<Vec<File>> {
    paths
        .iter()
        .map(|p| {
            let data = std::fs::read(p).with_context(|| format!("reading attachment {}", p.display()))?;
            let name = p
                .file_name()
                .and_then(|n| n.to_str())
                .with_context(|| format!("attachment {} has no usable file name", p.display()))?
                .to_owned();
            let media_type = mime_guess::from_path(p).first_or_octet_stream().essence_str().to_owned();
            Ok(File { name, media_type, data })
        })
        .collect()
}

/// Comments on a run still taking data are online comments; later ones
/// are offline comments. Both modes use the same rule.
fn origin_for(header: &RunHeader) -> CommentOrigin {
    if header.status == RunStatus::Open {
        CommentOrigin::Online
    } else {
        CommentOrigin::Offline
    }
}

pub fn run(args: Args) -> anyhow::Result<()> {
    if args.text.trim().is_empty() && args.attach.is_empty() {
        bail!("a comment needs --text or at least one --attach");
    }
    // Read everything first so that a missing file stores nothing.
    let files = read_attachments(&args.attach)?;
    let id = match (&args.root, &args.server) {
        (Some(root), _) => offline(root, &args, files)?,
        (None, Some(server)) => online(server, &args, files)?,
        (None, None) => unreachable!("clap requires --root or --server"),
    };
    println!("{id}");
    Ok(())
}

fn offline(root: &std::path::Path, args: &Args, files: Vec<File>) -> anyhow::Result<u64> {
    let author = args.author.clone().context("--author is required with --root")?;
    let repo = crate::open_repo(root, true)?;
    let detail = repo.get_run_detail(&args.partition, args.run)?;
    let attachments = files
        .iter()
        .map(|f| Attachment::describe(f.name.clone(), f.media_type.clone(), &f.data))
        .collect();
    let comment = NewComment {
        author,
        created_at: Timestamp::now(),
        text: args.text.clone(),
        origin: origin_for(&detail.header),
        attachments,
    };
    comment.validate()?;
    let blobs: Vec<Vec<u8>> = files.into_iter().map(|f| f.data).collect();
    Ok(repo.append_comment(&args.partition, args.run, &comment, &blobs)?)
}

fn check(resp: reqwest::blocking::Response) -> anyhow::Result<serde_json::Value> {
    let status = resp.status();
    let body: serde_json::Value = resp.json().unwrap_or(serde_json::Value::Null);
    if !status.is_success() {
        let msg = body["error"]["message"].as_str().unwrap_or("no details");
        bail!("service answered {status}: {msg}");
    }
    Ok(body)
}

fn online(server: &str, args: &Args, files: Vec<File>) -> anyhow::Result<u64> {
    let token = args.token.as_deref().context("--token (or OBK_TOKEN) is required with --server")?;
    let base = server.trim_end_matches('/');
    let client = reqwest::blocking::Client::new();
    if let Some(author) = &args.author {
        let me = check(client.get(format!("{base}/api/v1/auth/whoami")).bearer_auth(token).send()?)?;
        if me["username"].as_str() != Some(author.as_str()) {
            bail!("--author {author:?} does not match the token's account {}", me["username"]);
        }
    }
    let run_url = format!("{base}/api/v1/runs/{}/{}", args.partition, args.run);
    let detail: RunDetail = serde_json::from_value(check(client.get(&run_url).send()?)?)?;
    let mut form = reqwest::blocking::multipart::Form::new()
        .text("text", args.text.clone())
        .text("origin", origin_for(&detail.header).as_str());
    for f in files {
        let part = reqwest::blocking::multipart::Part::bytes(f.data)
            .file_name(f.name)
            .mime_str(&f.media_type)?;
        form = form.part("file", part);
    }
    let body = check(client.post(format!("{run_url}/comments")).bearer_auth(token).multipart(form).send()?)?;
    body["comment_id"].as_u64().context("service reply lacks comment_id")
}
