//! Golden HTTP exchanges against the API router, run in-process.
//!
//! Each case in the fixture file names a request and the expected status;
//! the recorded response (status, selected headers, body) is compared
//! exactly. Running with `OBK_BLESS=1` rewrites the recorded responses but
//! still fails when a status differs from `expect_status`.

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, Response};
use http_body_util::BodyExt;
use obk_core::model::Timestamp;
use obk_core::storage::{create_repository, BackendId, Backend};
use obk_service::{fixture, router, AppState, HashParams, ServiceConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tower::ServiceExt;

/// 2024-03-10T12:00:00Z
pub const NOW_MS: i64 = 1_710_072_000_000;

const HEADERS: [&str; 5] = ["content-type", "content-disposition", "www-authenticate", "etag", "x-content-type-options"];
const BOUNDARY: &str = "obk-golden-boundary";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Case {
    pub name: String,
    pub request: GoldenRequest,
    pub expect_status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<GoldenResponse>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldenRequest {
    pub method: String,
    pub path: String,
    /// `admin`, `writer`, `reader`: a valid token for that account;
    /// `expired`: an expired writer token; anything else is sent verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipart: Option<Vec<Part>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Part {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filename: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_type: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenResponse {
    pub status: u16,
    pub headers: serde_json::Map<String, Value>,
    pub body: Body2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Body2 {
    Empty,
    Json(Value),
    Text(String),
    Hex(String),
}

#[derive(Debug, Default)]
pub struct GoldenReport {
    pub cases: usize,
    pub failures: Vec<String>,
}

impl GoldenReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Env {
    _dir: tempfile::TempDir,
    state: AppState,
    tokens: Vec<(&'static str, String)>,
    expired: String,
}

fn now() -> Timestamp {
    Timestamp::from_millis(NOW_MS).expect("in range")
}

fn env() -> Env {
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path().join("main");
    let repo: Arc<dyn Backend> = create_repository(BackendId::FileStore, &root).expect("create").into_backend().into();
    fixture::populate(repo.as_ref(), HashParams::INSECURE_FAST).expect("fixture");
    let mut config = ServiceConfig::new(root);
    config.password_hash = HashParams::INSECURE_FAST;
    let state = AppState::with_clock(config, repo, Arc::new(now)).expect("state");
    let later = Timestamp::from_millis(NOW_MS + 3_600_000).expect("in range");
    let tokens = ["admin", "writer", "reader"]
        .into_iter()
        .map(|u| (u, state.sessions().issue(u, later)))
        .collect();
    let expired = state
        .sessions()
        .issue("writer", Timestamp::from_millis(NOW_MS - 1).expect("in range"));
    Env {
        _dir: dir,
        state,
        tokens,
        expired,
    }
}

fn build(env: &Env, req: &GoldenRequest) -> Request<Body> {
    let mut b = Request::builder().method(req.method.as_str()).uri(req.path.as_str());
    if let Some(auth) = &req.auth {
        let token = match auth.as_str() {
            "expired" => env.expired.clone(),
            other => env
                .tokens
                .iter()
                .find(|(u, _)| *u == other)
                .map_or_else(|| other.to_owned(), |(_, t)| t.clone()),
        };
        b = b.header("authorization", format!("Bearer {token}"));
    }
    if let Some(json) = &req.json {
        b.header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(json).expect("json")))
            .expect("request")
    } else if let Some(parts) = &req.multipart {
        let mut body = String::new();
        for p in parts {
            body.push_str(&format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{}\"", p.name));
            if let Some(f) = &p.filename {
                body.push_str(&format!("; filename=\"{f}\""));
            }
            body.push_str("\r\n");
            if let Some(ct) = &p.content_type {
                body.push_str(&format!("Content-Type: {ct}\r\n"));
            }
            body.push_str(&format!("\r\n{}\r\n", p.text));
        }
        body.push_str(&format!("--{BOUNDARY}--\r\n"));
        b.header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .body(Body::from(body))
            .expect("request")
    } else {
        b.body(Body::empty()).expect("request")
    }
}

async fn record(resp: Response<Body>) -> GoldenResponse {
    let status = resp.status().as_u16();
    let mut headers = serde_json::Map::new();
    for h in HEADERS {
        if let Some(v) = resp.headers().get(h) {
            headers.insert(h.to_owned(), Value::String(v.to_str().unwrap_or("<binary>").to_owned()));
        }
    }
    let is_json = resp
        .headers()
        .get("content-type")
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let bytes = resp.into_body().collect().await.expect("body").to_bytes();
    let body = if bytes.is_empty() {
        Body2::Empty
    } else if is_json {
        let mut v: Value = serde_json::from_slice(&bytes).expect("JSON body");
        if let Some(t) = v.get_mut("token") {
            *t = Value::String("<token>".into());
        }
        Body2::Json(v)
    } else {
        match std::str::from_utf8(&bytes) {
            Ok(s) => Body2::Text(s.to_owned()),
            Err(_) => Body2::Hex(hex::encode(&bytes)),
        }
    };
    GoldenResponse { status, headers, body }
}

/// Runs every case of `path` in order against one fresh fixture service.
pub fn run(path: &Path, bless: bool) -> GoldenReport {
    let text = std::fs::read_to_string(path).expect("golden file");
    let mut cases: Vec<Case> = serde_json::from_str(&text).expect("golden file is valid");
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .expect("runtime");
    let env = env();
    let mut report = GoldenReport::default();
    for case in &mut cases {
        report.cases += 1;
        let req = build(&env, &case.request);
        let app = router(env.state.clone());
        let got = rt.block_on(async { record(app.oneshot(req).await.expect("infallible")).await });
        if got.status != case.expect_status {
            report.failures.push(format!(
                "{}: status {} (expected {}): {:?}",
                case.name, got.status, case.expect_status, got.body
            ));
        }
        if bless {
            case.response = Some(got);
        } else if case.response.as_ref() != Some(&got) {
            report.failures.push(format!(
                "{}: response differs\n  expected: {}\n  actual:   {}",
                case.name,
                serde_json::to_string(&case.response).unwrap_or_default(),
                serde_json::to_string(&got).unwrap_or_default()
            ));
        }
    }
    if bless {
        let mut out = serde_json::to_string_pretty(&cases).expect("serialize");
        out.push('\n');
        std::fs::write(path, out).expect("write golden file");
    }
    report
}
