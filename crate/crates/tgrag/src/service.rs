//! HTTP JSON facade over a loaded index.
//!
//! Readers query immutable snapshots; an update builds a new snapshot off
//! to the side and swaps it in atomically, so queries in flight keep the
//! pre-update view. One update at a time: a second concurrent update gets
//! 409 instead of queueing.

use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, Providers};
use crate::engine::{Engine, IndexState, IngestReport};
use crate::error::{Error, ProviderErrorKind};
use crate::ingest::Document;
use crate::prompts::TemplateSet;
use crate::retrieval::{AnswerRecord, QueryCtx, ScoringMode};
use crate::time::parse_timestamp;
use crate::tokenize::WhitespaceTokenizer;

// ---------------------------------------------------------------------------
// Wire types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRequest {
    pub question: String,
    /// `local` or `global`.
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring_mode: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateRequest {
    pub docs: Vec<Document>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> (StatusCode, ApiError) {
        (
            status,
            ApiError {
                code: code.to_string(),
                message: message.into(),
                detail: None,
            },
        )
    }
}

struct ApiFailure(StatusCode, ApiError);

impl IntoResponse for ApiFailure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn map_error(err: Error) -> ApiFailure {
    let status = match &err {
        Error::Provider {
            kind:
                ProviderErrorKind::Network | ProviderErrorKind::RateLimit | ProviderErrorKind::Auth,
            ..
        } => StatusCode::SERVICE_UNAVAILABLE,
        Error::UpdateInProgress => StatusCode::CONFLICT,
        Error::InvalidArgument(_)
        | Error::MalformedTimestamp(_)
        | Error::InvalidDate(_)
        | Error::EmptyCorpus
        | Error::EmptyDocument(_)
        | Error::Config(_) => StatusCode::BAD_REQUEST,
        Error::MissingReport(_) => StatusCode::NOT_FOUND,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    ApiFailure(
        status,
        ApiError {
            code: err.code().to_string(),
            message: err.to_string(),
            detail: None,
        },
    )
}

// ---------------------------------------------------------------------------
// Service state
// ---------------------------------------------------------------------------

pub struct ServiceState {
    index: RwLock<Arc<IndexState>>,
    update_gate: Mutex<()>,
    providers: Providers,
    cfg: EngineConfig,
    templates: TemplateSet,
    /// When set, successful updates are persisted here.
    index_dir: Option<PathBuf>,
}

impl ServiceState {
    pub fn new(
        state: IndexState,
        cfg: EngineConfig,
        providers: Providers,
        templates: TemplateSet,
        index_dir: Option<PathBuf>,
    ) -> Arc<ServiceState> {
        Arc::new(ServiceState {
            index: RwLock::new(Arc::new(state)),
            update_gate: Mutex::new(()),
            providers,
            cfg,
            templates,
            index_dir,
        })
    }

    pub fn snapshot(&self) -> Arc<IndexState> {
        self.index.read().expect("index lock").clone()
    }

    fn swap(&self, next: IndexState) {
        *self.index.write().expect("index lock") = Arc::new(next);
    }

    /// Answer against the current snapshot; the snapshot stays pinned for
    /// the whole query even if an update swaps underneath.
    pub fn answer(&self, req: &QueryRequest) -> crate::error::Result<AnswerRecord> {
        let snapshot = self.snapshot();
        let scoring_mode = match &req.scoring_mode {
            Some(s) => s.parse::<ScoringMode>()?,
            None => self.cfg.scoring_mode,
        };
        let tokenizer = WhitespaceTokenizer;
        let ctx = QueryCtx {
            state: &snapshot,
            llm: self.providers.query_llm.as_ref(),
            embedder: self.providers.embedder.as_ref(),
            templates: &self.templates,
            cfg: &self.cfg,
            tokenizer: &tokenizer,
            scoring_mode,
        };
        match req.mode.as_str() {
            "local" => crate::retrieval::answer_local(&ctx, &req.question),
            "global" => crate::retrieval::answer_global(&ctx, &req.question),
            other => Err(Error::InvalidArgument(format!(
                "mode must be local or global, got {other:?}"
            ))),
        }
    }

    /// Single-writer update: clone the snapshot, ingest, refresh reports,
    /// persist when configured, then swap.
    pub fn update(&self, docs: &[Document]) -> crate::error::Result<IngestReport> {
        let _gate = self
            .update_gate
            .try_lock()
            .map_err(|_| Error::UpdateInProgress)?;
        let current = self.snapshot();
        let mut engine = Engine::with_state(
            (*current).clone(),
            self.cfg.clone(),
            self.providers.clone(),
            self.templates.clone(),
        );
        let report = engine.update(docs)?;
        if let Some(dir) = &self.index_dir {
            engine.save(dir)?;
        }
        self.swap(engine.state);
        Ok(report)
    }
}

// ---------------------------------------------------------------------------
// Router and handlers
// ---------------------------------------------------------------------------

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/stats", get(stats))
        .route("/query", post(query))
        .route("/update", post(update))
        .route("/time/{timestamp}/report", get(time_report))
        .with_state(state)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

async fn stats(State(state): State<Arc<ServiceState>>) -> Response {
    Json(state.snapshot().stats()).into_response()
}

async fn query(State(state): State<Arc<ServiceState>>, Json(req): Json<QueryRequest>) -> Response {
    let result = tokio::task::spawn_blocking(move || state.answer(&req)).await;
    match result {
        Ok(Ok(record)) => Json(record).into_response(),
        Ok(Err(err)) => map_error(err).into_response(),
        Err(join) => ApiFailure::from_join(join).into_response(),
    }
}

async fn update(
    State(state): State<Arc<ServiceState>>,
    Json(req): Json<UpdateRequest>,
) -> Response {
    let result = tokio::task::spawn_blocking(move || state.update(&req.docs)).await;
    match result {
        Ok(Ok(report)) => Json(report).into_response(),
        Ok(Err(err)) => map_error(err).into_response(),
        Err(join) => ApiFailure::from_join(join).into_response(),
    }
}

async fn time_report(
    State(state): State<Arc<ServiceState>>,
    UrlPath(timestamp): UrlPath<String>,
) -> Response {
    let ts = match parse_timestamp(&timestamp) {
        Ok(ts) => ts,
        Err(e) => return map_error(e).into_response(),
    };
    let snapshot = state.snapshot();
    match snapshot.reports.get(&ts) {
        Some(report) => Json(report.clone()).into_response(),
        None => map_error(Error::MissingReport(ts.to_string())).into_response(),
    }
}

impl ApiFailure {
    fn from_join(err: tokio::task::JoinError) -> ApiFailure {
        let (status, body) = ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal_error",
            err.to_string(),
        );
        ApiFailure(status, body)
    }
}

/// Serve until the process is terminated.
pub async fn run(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
