//! HTTP API consumed by the review UI.

use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use btrads_core::evaluation::{evaluate_reports, BatchEvaluationReport, Exclusion};
use btrads_core::pipeline::{read_jsonl, CaseStatus, ConflictKind};
use btrads_core::store::{AuditEvent, CaseStore, OverrideRequest, RescoreOutcome, RescoreRequest, StoredCase};
use btrads_core::{BtradsCategory, ClinicalVariables, ObservedLabel, PipelineError};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const TOKEN_HEADER: &str = "x-api-token";
pub const EXCLUSIONS_FILE: &str = "exclusions.jsonl";
pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<CaseStore>,
    pub token: Option<String>,
}

impl AppState {
    pub fn new(store: CaseStore, token: Option<String>) -> Self {
        AppState {
            store: Arc::new(store),
            token: token.filter(|t| !t.is_empty()),
        }
    }
}

/// Error body: `{"code": ..., "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_error", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::NotFound(id) => ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("case not found: {id}")),
            PipelineError::Validation(m) => ApiError::validation(m),
            PipelineError::Domain(d) => ApiError::validation(d.to_string()),
            PipelineError::EmptyCohort => ApiError::new(StatusCode::CONFLICT, "empty_cohort", "no evaluable cases in the store"),
            other => {
                tracing::error!(error = %other, "request failed");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", other.to_string())
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, PipelineError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string()))?
        .map_err(ApiError::from)
}

fn body_or_validation(body: Result<Json<Value>, JsonRejection>) -> Result<Value, ApiError> {
    body.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn decode<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, ApiError> {
    serde_json::from_value(v).map_err(|e| ApiError::validation(e.to_string()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/cases", get(list_cases))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/rescore", post(rescore))
        .route("/cases/{id}/override", post(override_case))
        .route("/metrics", get(metrics))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(expected) = &state.token {
        let given = req.headers().get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", format!("missing or wrong {TOKEN_HEADER} header"))
                .into_response();
        }
    }
    next.run(req).await
}

#[derive(Debug, Default, Deserialize)]
pub struct ListQuery {
    pub page: Option<usize>,
    pub page_size: Option<usize>,
    pub category: Option<String>,
    pub conflict: Option<String>,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub status: CaseStatus,
    pub followup_date: chrono::NaiveDate,
    pub system_category: Option<BtradsCategory>,
    pub rescored_category: Option<BtradsCategory>,
    pub override_category: Option<BtradsCategory>,
    pub reference_label: Option<ObservedLabel>,
    pub correct_vs_reference: Option<bool>,
    pub conflicts: Vec<ConflictKind>,
}

impl CaseSummary {
    fn from_stored(c: &StoredCase) -> Self {
        let mut conflicts: Vec<ConflictKind> = c.report.conflicts.iter().map(|f| f.kind).collect();
        conflicts.sort();
        conflicts.dedup();
        CaseSummary {
            case_id: c.record.case_id.clone(),
            status: c.report.status,
            followup_date: c.report.followup_date,
            system_category: c.report.category(),
            rescored_category: c.reviewer.rescore.as_ref().map(|s| s.category),
            override_category: c.reviewer.override_category,
            reference_label: c.report.reference_label.clone(),
            correct_vs_reference: c.report.correct_vs_reference,
            conflicts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePage {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub items: Vec<CaseSummary>,
}

fn parse_conflict(s: &str) -> Result<ConflictKind, ApiError> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| ApiError::validation(format!("unknown conflict kind {s:?}")))
}

async fn list_cases(State(state): State<AppState>, Query(q): Query<ListQuery>) -> ApiResult<CasePage> {
    let category = q
        .category
        .as_deref()
        .map(|s| s.parse::<BtradsCategory>().map_err(|_| ApiError::validation(format!("unknown category {s:?}"))))
        .transpose()?;
    let conflict = q.conflict.as_deref().map(parse_conflict).transpose()?;
    let page = q.page.unwrap_or(1);
    if page == 0 {
        return Err(ApiError::validation("page starts at 1"));
    }
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::validation(format!("page_size must be between 1 and {MAX_PAGE_SIZE}")));
    }
    let matching: Vec<CaseSummary> = state
        .store
        .list()
        .iter()
        .filter(|c| category.is_none_or(|k| c.report.category() == Some(k)))
        .filter(|c| conflict.is_none_or(|k| c.report.has_conflict(k)))
        .filter(|c| q.correct.is_none_or(|want| c.report.correct_vs_reference == Some(want)))
        .map(CaseSummary::from_stored)
        .collect();
    let total = matching.len();
    let items = matching.into_iter().skip((page - 1) * page_size).take(page_size).collect();
    Ok(Json(CasePage {
        total,
        page,
        page_size,
        items,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDetail {
    #[serde(flatten)]
    pub case: StoredCase,
    pub audit: Vec<AuditEvent>,
}

async fn get_case(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<CaseDetail> {
    let store = state.store.clone();
    let detail = blocking(move || {
        let case = store.get(&id)?;
        let audit = store.audit_events(Some(&id))?;
        Ok(CaseDetail { case, audit })
    })
    .await?;
    Ok(Json(detail))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RescoreBody {
    #[serde(default)]
    case_id: Option<String>,
    edited_variables: ClinicalVariables,
}

async fn rescore(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Value>, JsonRejection>,
) -> ApiResult<RescoreOutcome> {
    let body: RescoreBody = decode(body_or_validation(body)?)?;
    if let Some(other) = body.case_id.filter(|c| *c != id) {
        return Err(ApiError::validation(format!("body case_id {other:?} does not match path {id:?}")));
    }
    let store = state.store.clone();
    let out = blocking(move || {
        store.rescore_with_edits(RescoreRequest {
            case_id: id,
            edited_variables: body.edited_variables,
        })
    })
    .await?;
    Ok(Json(out))
}

async fn override_case(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Value>, JsonRejection>,
) -> ApiResult<AuditEvent> {
    let req: OverrideRequest = decode(body_or_validation(body)?)?;
    let store = state.store.clone();
    let event = blocking(move || store.record_override(&id, req)).await?;
    Ok(Json(event))
}

/// Exclusions recorded next to the store by `score --store`.
pub fn load_exclusions(dir: &Path) -> Result<Vec<Exclusion>, PipelineError> {
    let path = dir.join(EXCLUSIONS_FILE);
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

async fn metrics(State(state): State<AppState>) -> ApiResult<BatchEvaluationReport> {
    let store = state.store.clone();
    let report = blocking(move || {
        let reports = store.system_reports();
        let exclusions = load_exclusions(store.dir())?;
        let n_input = (reports.len() + exclusions.len()) as u64;
        evaluate_reports(&reports, &exclusions, n_input, store.config())
    })
    .await?;
    Ok(Json(report))
}
