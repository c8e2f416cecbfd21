//! JSON-over-HTTP front end for a trained model and the cosine baseline.
//!
//! | method | path             | body                                      |
//! |--------|------------------|-------------------------------------------|
//! | GET    | `/health`        |                                           |
//! | GET    | `/questions`     | query `offset`, `limit`                   |
//! | POST   | `/score-options` | `{"question_id", "scorer"}`               |
//! | POST   | `/validate`      | `{"question_id", "user_answer", "scorer"}`|
//!
//! Errors are `{"error": message}` with a 4xx/5xx status. Listings never
//! carry the answer key.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use answervault::baseline::CosineBaseline;
use answervault::corpus::{InputFormat, QuestionRecord};
use answervault::evaluate::{predict, validate_free_answer, Scorer, ValidationVerdict, DEFAULT_THRESHOLD};
use answervault::siamese::SiameseModel;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

pub const DEFAULT_PAGE: usize = 20;
pub const MAX_PAGE: usize = 500;

/// Everything the handlers read. Built once before the listener starts.
#[derive(Clone)]
pub struct ServiceState {
    model: Option<Arc<SiameseModel>>,
    baseline: Option<Arc<CosineBaseline>>,
    questions: Arc<Vec<QuestionRecord>>,
    by_id: Arc<HashMap<String, usize>>,
    threshold: f64,
    format: InputFormat,
}

impl ServiceState {
    /// Question store with no scorers, the default threshold, and
    /// options-only scoring. Later ids shadow earlier duplicates.
    pub fn new(questions: Vec<QuestionRecord>) -> Self {
        let by_id = questions.iter().enumerate().map(|(i, q)| (q.id.clone(), i)).collect();
        Self {
            model: None,
            baseline: None,
            questions: Arc::new(questions),
            by_id: Arc::new(by_id),
            threshold: DEFAULT_THRESHOLD,
            format: InputFormat::OptionsOnly,
        }
    }

    pub fn with_model(mut self, model: SiameseModel) -> Self {
        self.model = Some(Arc::new(model));
        self
    }

    pub fn with_baseline(mut self, baseline: CosineBaseline) -> Self {
        self.baseline = Some(Arc::new(baseline));
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_format(mut self, format: InputFormat) -> Self {
        self.format = format;
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn format(&self) -> InputFormat {
        self.format
    }

    pub fn question_count(&self) -> usize {
        self.questions.len()
    }

    /// First 16 hex digits of the model fingerprint.
    pub fn model_version(&self) -> Option<String> {
        self.model.as_ref().map(|m| m.fingerprint()[..16].to_owned())
    }

    fn question(&self, id: &str) -> Result<&QuestionRecord, ApiError> {
        self.by_id
            .get(id)
            .map(|&i| &self.questions[i])
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown question id {id:?}")))
    }

    fn scorer(&self, name: &str) -> Result<Arc<dyn Scorer + Send>, ApiError> {
        let unavailable = |what: &str| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("{what} scorer is not loaded"));
        match name {
            "siamese" => self
                .model
                .clone()
                .map(|m| m as Arc<dyn Scorer + Send>)
                .ok_or_else(|| unavailable("siamese")),
            "baseline" => self
                .baseline
                .clone()
                .map(|b| b as Arc<dyn Scorer + Send>)
                .ok_or_else(|| unavailable("baseline")),
            other => Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("unknown scorer {other:?} (expected siamese or baseline)"),
            )),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_version: Option<String>,
    pub questions: usize,
}

async fn health(State(state): State<ServiceState>) -> (StatusCode, Json<Health>) {
    let version = state.model_version();
    let status = if version.is_some() { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    let body = Health {
        status: if version.is_some() { "ok" } else { "unavailable" }.into(),
        model_version: version,
        questions: state.question_count(),
    };
    (status, Json(body))
}

#[derive(Debug, Deserialize)]
pub struct PageQuery {
    offset: Option<usize>,
    limit: Option<usize>,
}

/// A question as listed: no correct index.
#[derive(Debug, Serialize, Deserialize)]
pub struct QuestionView {
    pub id: String,
    pub question: String,
    pub options: [String; 4],
    pub support: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QuestionPage {
    pub total: usize,
    pub offset: usize,
    pub items: Vec<QuestionView>,
}

async fn questions(
    State(state): State<ServiceState>,
    query: Result<Query<PageQuery>, QueryRejection>,
) -> Result<Json<QuestionPage>, ApiError> {
    let Query(q) = query?;
    let offset = q.offset.unwrap_or(0);
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let items = state
        .questions
        .iter()
        .skip(offset)
        .take(limit)
        .map(|r| QuestionView {
            id: r.id.clone(),
            question: r.question.clone(),
            options: r.options.clone(),
            support: r.support.clone(),
        })
        .collect();
    Ok(Json(QuestionPage {
        total: state.question_count(),
        offset,
        items,
    }))
}

fn default_scorer() -> String {
    "siamese".into()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub question_id: String,
    #[serde(default = "default_scorer")]
    pub scorer: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub question_id: String,
    pub scorer: String,
    pub format: InputFormat,
    pub scores: [f64; 4],
    pub chosen_index: usize,
    pub chosen_option: String,
}

/// Runs blocking scorer work off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> answervault::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(answervault::Error::EmptyAnswer)) => Err(ApiError::new(StatusCode::BAD_REQUEST, "answer is empty")),
        Ok(Err(e)) => Err(ApiError::internal(e.to_string())),
        Err(e) => Err(ApiError::internal(format!("scoring task failed: {e}"))),
    }
}

async fn score_options(
    State(state): State<ServiceState>,
    body: Result<Json<ScoreRequest>, JsonRejection>,
) -> Result<Json<ScoreResponse>, ApiError> {
    let Json(req) = body?;
    let scorer = state.scorer(&req.scorer)?;
    let record = state.question(&req.question_id)?.clone();
    let format = state.format;
    let verdict = blocking(move || predict(scorer.as_ref(), &record, format)).await?;
    Ok(Json(ScoreResponse {
        question_id: req.question_id,
        scorer: req.scorer,
        format,
        scores: verdict.per_option_scores,
        chosen_index: verdict.chosen_index,
        chosen_option: verdict.reference_answer,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub question_id: String,
    pub user_answer: String,
    #[serde(default = "default_scorer")]
    pub scorer: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub question_id: String,
    pub scorer: String,
    #[serde(flatten)]
    pub verdict: ValidationVerdict,
}

async fn validate(
    State(state): State<ServiceState>,
    body: Result<Json<ValidateRequest>, JsonRejection>,
) -> Result<Json<ValidateResponse>, ApiError> {
    let Json(req) = body?;
    if req.user_answer.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "answer is empty"));
    }
    let scorer = state.scorer(&req.scorer)?;
    let record = state.question(&req.question_id)?.clone();
    let threshold = state.threshold;
    let answer = req.user_answer.clone();
    let verdict = blocking(move || validate_free_answer(scorer.as_ref(), &record, &answer, threshold)).await?;
    Ok(Json(ValidateResponse {
        question_id: req.question_id,
        scorer: req.scorer,
        verdict,
    }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint")
}

pub fn router(state: ServiceState, permissive_cors: bool) -> Router {
    let app = Router::new()
        .route("/health", get(health))
        .route("/questions", get(questions))
        .route("/score-options", post(score_options))
        .route("/validate", post(validate))
        .fallback(not_found)
        .with_state(state);
    if permissive_cors {
        app.layer(CorsLayer::permissive())
    } else {
        app
    }
}

/// Serves until ctrl-c.
pub async fn serve(state: ServiceState, addr: SocketAddr, permissive_cors: bool) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "listening on {} with {} questions, model {}",
        listener.local_addr()?,
        state.question_count(),
        state.model_version().as_deref().unwrap_or("none")
    );
    axum::serve(listener, router(state, permissive_cors))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
