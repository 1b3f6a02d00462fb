use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequestParts, Multipart, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use obk_core::model::{
    is_valid_digest, is_valid_filename, is_valid_media_type, is_valid_partition, Attachment, CommentOrigin,
    NewComment, Role, User,
};
use obk_core::storage::{create_repository, Backend, BackendId, OpenOptions, Repository};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use crate::auth::hash_password;
use crate::error::ApiError;
use crate::params::parse_runs_query;
use crate::state::AppState;

/// The `/api/v1` router.
pub fn router(state: AppState) -> Router {
    let upload_limit = state.config().max_upload_bytes;
    let api = Router::new()
        .route("/partitions", get(partitions))
        .route("/runs", get(runs))
        .route("/runs/:partition/:run_number", get(run_detail))
        .route(
            "/runs/:partition/:run_number/comments",
            post(post_comment).layer(DefaultBodyLimit::max(upload_limit)),
        )
        .route("/attachments/:digest", get(attachment))
        .route("/auth/login", post(login))
        .route("/auth/whoami", get(whoami))
        .route("/admin/users", get(list_users).post(put_user))
        .route("/admin/repositories", post(create_repo));
    Router::new()
        .nest("/api/v1", api)
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

/// An authenticated account; rejects with 401 without a valid bearer token.
pub struct Authenticated {
    pub username: String,
    pub role: Role,
}

impl Authenticated {
    fn require(&self, role: Role) -> Result<(), ApiError> {
        if self.role.allows(role) {
            Ok(())
        } else {
            Err(ApiError::forbidden(format!("requires the {role} role")))
        }
    }
}

#[axum::async_trait]
impl FromRequestParts<AppState> for Authenticated {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ApiError::unauthorized("missing bearer token"))?
            .to_owned();
        let state = state.clone();
        let account = blocking(move || Ok(state.authenticate(&token)?)).await?;
        let (username, role) = account.ok_or_else(|| ApiError::unauthorized("invalid or expired token"))?;
        Ok(Authenticated { username, role })
    }
}

async fn partitions(State(state): State<AppState>) -> Result<Json<Vec<String>>, ApiError> {
    blocking(move || Ok(Json(state.repo().partitions()?))).await
}

async fn runs(State(state): State<AppState>, Query(pairs): Query<Vec<(String, String)>>) -> Result<Response, ApiError> {
    let q = parse_runs_query(&pairs)?;
    blocking(move || Ok(Json(state.repo().find_runs(&q.criteria, q.include_open)?).into_response())).await
}

fn run_key(partition: &str, run_number: &str) -> Result<(String, u64), ApiError> {
    if !is_valid_partition(partition) {
        return Err(ApiError::bad_field("partition", "invalid partition name"));
    }
    let n = run_number
        .parse::<u64>()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ApiError::bad_field("run_number", "expected a positive integer"))?;
    Ok((partition.to_owned(), n))
}

async fn run_detail(State(state): State<AppState>, Path((partition, run)): Path<(String, String)>) -> Result<Response, ApiError> {
    let (partition, run) = run_key(&partition, &run)?;
    blocking(move || Ok(Json(state.repo().get_run_detail(&partition, run)?).into_response())).await
}

#[derive(Serialize)]
struct Created {
    comment_id: u64,
}

async fn post_comment(
    State(state): State<AppState>,
    user: Authenticated,
    Path((partition, run)): Path<(String, String)>,
    mut form: Multipart,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    user.require(Role::Writer)?;
    let (partition, run) = run_key(&partition, &run)?;
    let mut text = String::new();
    let mut origin = CommentOrigin::Web;
    let mut attachments = Vec::new();
    let mut blobs = Vec::new();
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::bad_field("body", format!("invalid multipart body: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_owned();
        match field.file_name().map(str::to_owned) {
            Some(filename) => {
                if !is_valid_filename(&filename) {
                    return Err(ApiError::bad_field(&name, format!("invalid file name {filename:?}")));
                }
                let media_type = field.content_type().unwrap_or("application/octet-stream").to_owned();
                if !is_valid_media_type(&media_type) {
                    return Err(ApiError::bad_field(&name, format!("invalid media type {media_type:?}")));
                }
                let data: Bytes = field
                    .bytes()
                    .await
                    .map_err(|e| ApiError::bad_field(&name, format!("unreadable upload: {e}")))?;
                attachments.push(Attachment::describe(filename, media_type, &data));
                blobs.push(data.to_vec());
            }
            None if name == "text" => {
                text = field
                    .text()
                    .await
                    .map_err(|e| ApiError::bad_field("text", format!("unreadable text: {e}")))?;
            }
            // Optional; the command-line client sends it, browsers do not.
            None if name == "origin" => {
                let value = field
                    .text()
                    .await
                    .map_err(|e| ApiError::bad_field("origin", format!("unreadable origin: {e}")))?;
                origin = match value.as_str() {
                    "Online" => CommentOrigin::Online,
                    "Offline" => CommentOrigin::Offline,
                    "Web" => CommentOrigin::Web,
                    _ => return Err(ApiError::bad_field("origin", "expected Online, Offline or Web")),
                };
            }
            None => return Err(ApiError::bad_field(&name, format!("unexpected form field {name:?}"))),
        }
    }
    if text.trim().is_empty() && attachments.is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "EMPTY_COMMENT",
            "a comment needs text or at least one file",
        ));
    }
    let comment = NewComment {
        author: user.username,
        created_at: state.now(),
        text,
        origin,
        attachments,
    };
    let id = blocking(move || Ok(state.repo().append_comment(&partition, run, &comment, &blobs)?)).await?;
    Ok((StatusCode::CREATED, Json(Created { comment_id: id })))
}

fn content_disposition(inline: bool, filename: &str) -> HeaderValue {
    let ascii: String = filename
        .chars()
        .map(|c| if c.is_ascii_graphic() && c != '"' && c != '\\' || c == ' ' { c } else { '_' })
        .collect();
    let encoded = utf8_percent_encode(filename, NON_ALPHANUMERIC);
    let kind = if inline { "inline" } else { "attachment" };
    HeaderValue::from_str(&format!("{kind}; filename=\"{ascii}\"; filename*=UTF-8''{encoded}"))
        .unwrap_or_else(|_| HeaderValue::from_static("attachment"))
}

async fn attachment(State(state): State<AppState>, Path(digest): Path<String>) -> Result<Response, ApiError> {
    if !is_valid_digest(&digest) {
        return Err(ApiError::bad_field("digest", "expected 64 lowercase hex digits"));
    }
    let inline_types = state.config().inline_types.clone();
    let (meta, data) = blocking(move || Ok(state.repo().get_attachment(&digest)?)).await?;
    let essence = meta.media_type.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    let inline = inline_types.iter().any(|t| t.eq_ignore_ascii_case(&essence));
    let mut headers = HeaderMap::new();
    headers.insert(
        header::CONTENT_TYPE,
        HeaderValue::from_str(&meta.media_type).unwrap_or(HeaderValue::from_static("application/octet-stream")),
    );
    headers.insert(header::CONTENT_DISPOSITION, content_disposition(inline, &meta.filename));
    headers.insert(header::X_CONTENT_TYPE_OPTIONS, HeaderValue::from_static("nosniff"));
    headers.insert(
        header::ETAG,
        HeaderValue::from_str(&format!("\"{}\"", meta.digest)).expect("hex digest is a valid header"),
    );
    Ok((headers, data).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Login {
    username: String,
    password: String,
}

#[derive(Serialize)]
struct Token {
    token: String,
    username: String,
    role: Role,
    expires_at: obk_core::model::Timestamp,
}

fn json_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_field("body", format!("invalid JSON body: {e}")))
}

async fn login(State(state): State<AppState>, body: Bytes) -> Result<Json<Token>, ApiError> {
    let req: Login = json_body(&body)?;
    let ttl_ms = i64::try_from(state.config().token_ttl_secs.saturating_mul(1000)).unwrap_or(i64::MAX);
    blocking(move || {
        let user = state
            .check_login(&req.username, &req.password)?
            .ok_or_else(|| ApiError::unauthorized("unknown user or wrong password"))?;
        let expires_at = state
            .now()
            .checked_add_millis(ttl_ms)
            .ok_or_else(|| ApiError::internal("token expiry out of range"))?;
        let token = state.sessions().issue(&user.username, expires_at);
        Ok(Json(Token {
            token,
            username: user.username,
            role: user.role,
            expires_at,
        }))
    })
    .await
}

#[derive(Serialize)]
struct Account {
    username: String,
    role: Role,
}

async fn whoami(user: Authenticated) -> Json<Account> {
    Json(Account {
        username: user.username,
        role: user.role,
    })
}

async fn list_users(State(state): State<AppState>, user: Authenticated) -> Result<Json<Vec<Account>>, ApiError> {
    user.require(Role::Admin)?;
    blocking(move || {
        Ok(Json(
            state
                .repo()
                .list_users()?
                .into_iter()
                .map(|u| Account {
                    username: u.username,
                    role: u.role,
                })
                .collect(),
        ))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PutUser {
    username: String,
    password: Option<String>,
    role: Option<Role>,
}

pub fn is_valid_username(name: &str) -> bool {
    (1..=64).contains(&name.len()) && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Creates a user, or changes the password and/or role of an existing one.
async fn put_user(State(state): State<AppState>, admin: Authenticated, body: Bytes) -> Result<(StatusCode, Json<Account>), ApiError> {
    admin.require(Role::Admin)?;
    let req: PutUser = json_body(&body)?;
    if !is_valid_username(&req.username) {
        return Err(ApiError::bad_field("username", "1-64 characters from A-Z a-z 0-9 _ - ."));
    }
    if req.password.as_deref() == Some("") {
        return Err(ApiError::bad_field("password", "must not be empty"));
    }
    blocking(move || {
        let repo = state.repo();
        let existing = repo.get_user(&req.username)?;
        let (status, password_hash, role) = match existing {
            None => {
                let password = req
                    .password
                    .ok_or_else(|| ApiError::bad_field("password", "required for a new user"))?;
                let role = req.role.ok_or_else(|| ApiError::bad_field("role", "required for a new user"))?;
                let hash = hash_password(&password, state.config().password_hash).map_err(|e| ApiError::internal(e.to_string()))?;
                (StatusCode::CREATED, hash, role)
            }
            Some(u) => {
                let hash = match req.password {
                    Some(p) => hash_password(&p, state.config().password_hash).map_err(|e| ApiError::internal(e.to_string()))?,
                    None => u.password_hash,
                };
                (StatusCode::OK, hash, req.role.unwrap_or(u.role))
            }
        };
        repo.put_user(&User {
            username: req.username.clone(),
            password_hash,
            role,
        })?;
        if status == StatusCode::OK {
            state.sessions().revoke_user(&req.username);
        }
        Ok((
            status,
            Json(Account {
                username: req.username,
                role,
            }),
        ))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewRepository {
    name: String,
    backend: String,
    #[serde(default = "yes")]
    activate: bool,
}

fn yes() -> bool {
    true
}

#[derive(Serialize)]
struct RepositoryInfo {
    name: String,
    backend: BackendId,
    active: bool,
}

/// Creates an empty repository under the configured repositories
/// directory, copying the current accounts into it, and optionally makes
/// it the served repository.
async fn create_repo(State(state): State<AppState>, admin: Authenticated, body: Bytes) -> Result<(StatusCode, Json<RepositoryInfo>), ApiError> {
    admin.require(Role::Admin)?;
    let req: NewRepository = json_body(&body)?;
    if !is_valid_username(&req.name) || req.name.starts_with('.') {
        return Err(ApiError::bad_field("name", "1-64 characters from A-Z a-z 0-9 _ - ., not starting with ."));
    }
    let backend = match req.backend.as_str() {
        "file" | "FileStore" => BackendId::FileStore,
        "relational" | "RelationalStore" => BackendId::RelationalStore,
        _ => return Err(ApiError::bad_field("backend", "expected file or relational")),
    };
    blocking(move || {
        let dir = state.repositories_dir();
        std::fs::create_dir_all(&dir).map_err(|e| ApiError::internal(format!("cannot create {}: {e}", dir.display())))?;
        let root = match backend {
            BackendId::RelationalStore => dir.join(format!("{}.sqlite", req.name)),
            _ => dir.join(&req.name),
        };
        if root.exists() {
            return Err(ApiError::new(StatusCode::CONFLICT, "ALREADY_EXISTS", format!("repository {:?} already exists", req.name)));
        }
        create_repository(backend, &root)?;
        let repo: Arc<dyn Backend> = Repository::open(&root, OpenOptions::default())?.into_backend().into();
        for u in state.repo().list_users()? {
            repo.put_user(&u)?;
        }
        if req.activate {
            state.set_repo(repo);
        }
        Ok((
            StatusCode::CREATED,
            Json(RepositoryInfo {
                name: req.name,
                backend,
                active: req.activate,
            }),
        ))
    })
    .await
}
