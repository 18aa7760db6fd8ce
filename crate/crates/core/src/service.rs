//! HTTP/JSON review service: browse samples, record decisions to the
//! append-only log, export the log, serve media and the static review UI.
//!
//! All routes live under `/v1`. Errors are `{code, message, details}`.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::domain::{InstructionSample, ReviewState, TaskKind, ValidationError};
use crate::geotext::{self, QuantizedBox, UnitBox};
use crate::jsonl::read_jsonl;
use crate::review::{apply_edit, export_order, latest_decisions, DecisionLog, ReviewDecision, Verdict};
use crate::templating::{ConversationFormat, DEFAULT_MEDIA_PLACEHOLDER};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// `corpus.samples.jsonl` of a build. Never written.
    pub samples_path: PathBuf,
    pub decision_log: PathBuf,
    /// Media files are looked up as `<media_root>/<dataset_id>/<path>`.
    pub media_root: Option<PathBuf>,
    /// Built review UI assets, served under `/v1/ui/`.
    pub ui_root: Option<PathBuf>,
    /// Shared bearer token; no auth when absent.
    pub auth_token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8787)),
            samples_path: PathBuf::from("out/corpus.samples.jsonl"),
            decision_log: PathBuf::from("out/decisions.jsonl"),
            media_root: None,
            ui_root: None,
            auth_token: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("loading samples: {0}")]
    Samples(#[from] crate::jsonl::JsonlError),
    #[error("decision log: {0}")]
    Log(#[from] crate::review::LogError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// An error response in the `{code, message, details}` shape.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    fn validation(e: ValidationError) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: "validation_failed",
            message: e.to_string(),
            details: json!({ "field": e.field, "message": e.message }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "details": self.details });
        (self.status, Json(body)).into_response()
    }
}

struct Store {
    log: DecisionLog,
    decisions: Vec<ReviewDecision>,
    /// Current state per sample id, after the latest decision.
    states: HashMap<String, ReviewState>,
}

pub struct AppState {
    samples: BTreeMap<String, InstructionSample>,
    store: RwLock<Store>,
    config: ServiceConfig,
}

impl AppState {
    pub fn load(config: ServiceConfig) -> Result<Self, ServiceError> {
        let samples: Vec<InstructionSample> = read_jsonl(&config.samples_path)?;
        Self::new(samples, config)
    }

    /// Builds the state from samples in memory, replaying the decision log.
    pub fn new(samples: Vec<InstructionSample>, config: ServiceConfig) -> Result<Self, ServiceError> {
        let samples: BTreeMap<String, InstructionSample> =
            samples.into_iter().map(|s| (s.sample_id.clone(), s)).collect();
        let (log, decisions) = DecisionLog::open(&config.decision_log)?;
        let states = replay(&samples, &decisions);
        Ok(Self {
            samples,
            store: RwLock::new(Store { log, decisions, states }),
            config,
        })
    }

    fn state_of(&self, store: &Store, id: &str) -> ReviewState {
        store
            .states
            .get(id)
            .copied()
            .unwrap_or_else(|| self.samples[id].review_state)
    }
}

fn replay(samples: &BTreeMap<String, InstructionSample>, decisions: &[ReviewDecision]) -> HashMap<String, ReviewState> {
    latest_decisions(decisions)
        .into_iter()
        .filter(|(id, _)| samples.contains_key(*id))
        .map(|(id, d)| (id.to_string(), d.verdict.resulting_state()))
        .collect()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/samples", get(list_samples))
        .route("/v1/samples/{id}", get(get_sample))
        .route("/v1/decisions", post(submit_decision))
        .route("/v1/export", get(export_decisions))
        .route("/v1/media/{*path}", get(media))
        .route("/v1/ui", get(ui_index))
        .route("/v1/ui/", get(ui_index))
        .route("/v1/ui/{*path}", get(ui_asset))
        .fallback(|| async { ApiError::not_found("no such route") })
        .with_state(state)
}

/// Binds and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let bind = config.bind;
    let state = Arc::new(AppState::load(config)?);
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, samples = state.samples.len(), "review service listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn authorize(state: &AppState, headers: &HeaderMap, query_token: Option<&str>) -> Result<(), ApiError> {
    let Some(expected) = &state.config.auth_token else {
        return Ok(());
    };
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .or(query_token);
    if presented == Some(expected.as_str()) {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token"))
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Value> {
    let decisions = state.store.read().expect("store lock").decisions.len();
    Json(json!({ "status": "ok", "samples": state.samples.len(), "decisions": decisions }))
}

#[derive(Debug, Default, Deserialize)]
struct ListQuery {
    state: Option<String>,
    kind: Option<String>,
    dataset_id: Option<String>,
    recipe: Option<String>,
    cursor: Option<String>,
    limit: Option<usize>,
    access_token: Option<String>,
}

#[derive(Debug, Serialize)]
struct SampleSummary<'a> {
    sample_id: &'a str,
    dataset_id: &'a str,
    path: &'a str,
    kinds: Vec<TaskKind>,
    turns: usize,
    source_recipe: &'a str,
    review_state: ReviewState,
}

fn is_sample_id(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

async fn list_samples(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<ListQuery>,
) -> Result<Json<Value>, ApiError> {
    authorize(&state, &headers, q.access_token.as_deref())?;
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", m);
    let want_state: Option<ReviewState> = q.state.as_deref().map(str::parse).transpose().map_err(bad)?;
    let want_kind: Option<TaskKind> = q
        .kind
        .as_deref()
        .map(|k| k.to_lowercase().parse())
        .transpose()
        .map_err(bad)?;
    if let Some(c) = &q.cursor {
        if !is_sample_id(c) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_cursor", "cursor must be a sample id"));
        }
    }
    let limit = q.limit.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);

    let store = state.store.read().expect("store lock");
    let mut counts: BTreeMap<ReviewState, usize> =
        [ReviewState::Pending, ReviewState::Accepted, ReviewState::Rejected, ReviewState::Edited]
            .into_iter()
            .map(|s| (s, 0))
            .collect();
    let mut matching: Vec<(&InstructionSample, ReviewState)> = Vec::new();
    for s in state.samples.values() {
        if want_kind.is_some_and(|k| !s.turns.iter().any(|t| t.kind == k))
            || q.dataset_id.as_ref().is_some_and(|d| &s.media.dataset_id != d)
            || q.recipe.as_ref().is_some_and(|r| &s.source_recipe != r)
        {
            continue;
        }
        let st = state.state_of(&store, &s.sample_id);
        *counts.entry(st).or_default() += 1;
        if want_state.is_none_or(|w| w == st) {
            matching.push((s, st));
        }
    }
    let total = matching.len();
    let start = match &q.cursor {
        Some(c) => matching.partition_point(|(s, _)| s.sample_id.as_str() <= c.as_str()),
        None => 0,
    };
    let page = &matching[start..(start + limit).min(total)];
    let next_cursor = (start + limit < total).then(|| page.last().map(|(s, _)| s.sample_id.clone())).flatten();
    let items: Vec<SampleSummary> = page
        .iter()
        .map(|(s, st)| SampleSummary {
            sample_id: &s.sample_id,
            dataset_id: &s.media.dataset_id,
            path: &s.media.path,
            kinds: s.turns.iter().map(|t| t.kind).collect(),
            turns: s.turns.len(),
            source_recipe: &s.source_recipe,
            review_state: *st,
        })
        .collect();
    let counts: BTreeMap<String, usize> = counts
        .into_iter()
        .map(|(k, v)| (serde_json::to_value(k).unwrap().as_str().unwrap().to_string(), v))
        .collect();
    Ok(Json(json!({ "items": items, "next_cursor": next_cursor, "total": total, "counts": counts })))
}

#[derive(Debug, Serialize)]
struct Overlay {
    turn: usize,
    /// `answer` or `instruction`: where the box text was found.
    source: &'static str,
    quantized: Vec<QuantizedBox>,
    boxes: Vec<UnitBox>,
}

/// Box overlays of grounding turns: answers of grounding and phrase
/// grounding turns, instructions of referring-expression turns.
fn overlays(sample: &InstructionSample) -> Vec<Overlay> {
    sample
        .turns
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            let (source, text) = match t.kind {
                TaskKind::VisualGrounding | TaskKind::PhraseGrounding => ("answer", &t.answer_text),
                TaskKind::ReferringExpressionGeneration => ("instruction", &t.instruction_text),
                _ => return None,
            };
            let quantized = geotext::parse_boxes(text).boxes;
            let boxes = quantized.iter().map(geotext::dequantize_box).collect();
            Some(Overlay {
                turn: i,
                source,
                quantized,
                boxes,
            })
        })
        .collect()
}

#[derive(Debug, Default, Deserialize)]
struct TokenQuery {
    access_token: Option<String>,
}

async fn get_sample(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TokenQuery>,
) -> Result<Json<Value>, ApiError> {
    authorize(&state, &headers, q.access_token.as_deref())?;
    let sample = state
        .samples
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown sample {id}")))?;
    let store = state.store.read().expect("store lock");
    let latest = latest_decisions(&store.decisions).get(id.as_str()).map(|d| (*d).clone());
    let rendered = ConversationFormat::with_media(DEFAULT_MEDIA_PLACEHOLDER)
        .render(&sample.turns)
        .map(|r| r.text)
        .unwrap_or_default();
    Ok(Json(json!({
        "sample": sample,
        "review_state": state.state_of(&store, &id),
        "media_url": format!("/v1/media/{}/{}", sample.media.dataset_id, sample.media.path),
        "media": { "width": sample.media.width, "height": sample.media.height },
        "rendered_text": rendered,
        "overlays": overlays(sample),
        "latest_decision": latest,
    })))
}

/// Decision as posted; the server fills a missing timestamp.
#[derive(Debug, Deserialize)]
struct DecisionBody {
    sample_id: String,
    verdict: Verdict,
    #[serde(default)]
    edited_turns: Option<Vec<crate::domain::ConversationTurn>>,
    reviewer: String,
    #[serde(default)]
    timestamp: Option<String>,
    #[serde(default)]
    note: Option<String>,
}

async fn submit_decision(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<DecisionBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    authorize(&state, &headers, None)?;
    let Json(body) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    let decision = ReviewDecision {
        sample_id: body.sample_id,
        verdict: body.verdict,
        edited_turns: body.edited_turns,
        reviewer: body.reviewer,
        timestamp: body
            .timestamp
            .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)),
        note: body.note,
    };
    decision.validate_shape().map_err(ApiError::validation)?;
    let sample = state
        .samples
        .get(&decision.sample_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown sample {}", decision.sample_id)))?;
    let edited_id = match (&decision.verdict, &decision.edited_turns) {
        (Verdict::Edit, Some(turns)) => Some(apply_edit(sample, turns).map_err(ApiError::validation)?.sample_id),
        _ => None,
    };

    let state2 = Arc::clone(&state);
    tokio::task::spawn_blocking(move || {
        let mut store = state2.store.write().expect("store lock");
        let current = latest_decisions(&store.decisions).get(decision.sample_id.as_str()).map(|d| (*d).clone());
        let appended = match current {
            Some(c) if c.same_content(&decision) => false,
            _ => {
                store
                    .log
                    .append(&decision)
                    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
                store.decisions.push(decision.clone());
                let latest = latest_decisions(&store.decisions)[decision.sample_id.as_str()].verdict;
                store.states.insert(decision.sample_id.clone(), latest.resulting_state());
                true
            }
        };
        let review_state = state2.state_of(&store, &decision.sample_id);
        Ok(Json(json!({
            "sample_id": decision.sample_id,
            "review_state": review_state,
            "edited_sample_id": edited_id,
            "appended": appended,
        })))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn export_decisions(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
) -> Result<Response, ApiError> {
    authorize(&state, &headers, q.access_token.as_deref())?;
    let store = state.store.read().expect("store lock");
    let mut body = String::new();
    for d in export_order(&store.decisions) {
        body.push_str(&serde_json::to_string(d).expect("decisions serialize"));
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

/// Joins `rel` under `root`, refusing anything that could leave it.
pub fn safe_join(root: &Path, rel: &str) -> Option<PathBuf> {
    let rel = Path::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let root = root.canonicalize().ok()?;
    let full = root.join(rel).canonicalize().ok()?;
    full.starts_with(&root).then_some(full)
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("tif" | "tiff") => "image/tiff",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        Some("mp4") => "video/mp4",
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

async fn send_file(root: Option<&Path>, rel: &str, what: &str) -> Result<Response, ApiError> {
    let root = root.ok_or_else(|| ApiError::not_found(format!("no {what} root configured")))?;
    let path = safe_join(root, rel).ok_or_else(|| ApiError::not_found(format!("{what} not found")))?;
    if !path.is_file() {
        return Err(ApiError::not_found(format!("{what} not found")));
    }
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn media(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    UrlPath(path): UrlPath<String>,
    Query(q): Query<TokenQuery>,
) -> Result<Response, ApiError> {
    authorize(&state, &headers, q.access_token.as_deref())?;
    send_file(state.config.media_root.as_deref(), &path, "media").await
}

async fn ui_index(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    send_file(state.config.ui_root.as_deref(), "index.html", "review UI").await
}

async fn ui_asset(State(state): State<Arc<AppState>>, UrlPath(path): UrlPath<String>) -> Result<Response, ApiError> {
    send_file(state.config.ui_root.as_deref(), &path, "review UI asset").await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn safe_join_refuses_escapes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("UCM")).unwrap();
        std::fs::write(dir.path().join("UCM/a.png"), b"x").unwrap();
        assert!(safe_join(dir.path(), "UCM/a.png").is_some());
        assert!(safe_join(dir.path(), "../etc/passwd").is_none());
        assert!(safe_join(dir.path(), "/etc/passwd").is_none());
        assert!(safe_join(dir.path(), "UCM/../../x").is_none());
        assert!(safe_join(dir.path(), "UCM/missing.png").is_none());
    }

    #[test]
    fn cursor_shape() {
        assert!(is_sample_id(&"a".repeat(64)));
        assert!(!is_sample_id("abc"));
        assert!(!is_sample_id(&"A".repeat(64)));
    }
}
