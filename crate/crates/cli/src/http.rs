//! HTTP+JSON front of [`SessionService`].
//!
//! Every session response carries `revision`; mutating requests may send
//! `expected_revision` and get 409 when it is stale.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use elicit_core::oracle::media::content_type;
use elicit_core::oracle::ImageHandle;
use elicit_core::session::Status;
use elicit_core::session::{InteractionEvent, RequirementEdit};
use elicit_core::{Answer, SessionError, SessionService, SessionState};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub fn router(service: Arc<SessionService>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/answer", post(answer))
        .route(
            "/sessions/:id/requirements",
            post(edit_requirements).patch(edit_requirements),
        )
        .route("/sessions/:id/generate", post(generate))
        .route("/sessions/:id/close", post(close))
        .route("/sessions/:id/events", get(events))
        .route("/media/:handle", get(media))
        .with_state(service)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OptionView {
    pub label: String,
    pub image_url: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryView {
    pub round: u32,
    pub feature: String,
    pub question: String,
    pub options: Vec<OptionView>,
    pub allow_other: bool,
    pub eaug: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RequirementView {
    pub feature: String,
    pub value: String,
    pub origin: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerationView {
    pub index: usize,
    pub prompt: String,
    pub image_url: Option<String>,
    pub render_error: Option<String>,
}

/// Client-facing projection of a session snapshot.
#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub revision: u64,
    pub status: String,
    pub initial_prompt: String,
    pub specification: Vec<RequirementView>,
    pub active_query: Option<QueryView>,
    pub generations: Vec<GenerationView>,
    pub last_error: Option<String>,
    pub exhausted: bool,
}

fn media_url(handle: &ImageHandle) -> String {
    format!("/media/{}", handle.as_str())
}

impl From<&SessionState> for SessionView {
    fn from(state: &SessionState) -> Self {
        SessionView {
            session_id: state.session_id.clone(),
            revision: state.revision,
            status: state.status.as_str().to_string(),
            initial_prompt: state.initial_prompt.clone(),
            specification: state
                .specification
                .requirements()
                .iter()
                .map(|r| RequirementView {
                    feature: r.feature.clone(),
                    value: r.value.clone(),
                    origin: serde_json::to_value(r.origin)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default(),
                })
                .collect(),
            active_query: state
                .active_query
                .as_ref()
                .filter(|_| state.status != Status::Closed)
                .map(|active| QueryView {
                    round: active.round,
                    feature: active.query.feature.clone(),
                    question: active.question.clone(),
                    options: active
                        .query
                        .options
                        .iter()
                        .map(|o| OptionView {
                            label: o.label.clone(),
                            image_url: o.exemplar_image.as_ref().map(media_url),
                        })
                        .collect(),
                    allow_other: active.query.has_residual,
                    eaug: active.eaug,
                }),
            generations: state
                .generations
                .iter()
                .map(|g| GenerationView {
                    index: g.index,
                    prompt: g.prompt.text.clone(),
                    image_url: g.image.as_ref().map(media_url),
                    render_error: g.render_error.clone(),
                })
                .collect(),
            last_error: state.last_error.clone(),
            exhausted: state.exhausted,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateRequest {
    pub initial_prompt: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct AnswerRequest {
    #[serde(default)]
    pub option_index: Option<usize>,
    #[serde(default)]
    pub other_text: Option<String>,
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditRequest {
    pub edits: Vec<RequirementEdit>,
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct GenerateRequest {
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventsView {
    pub session_id: String,
    pub revision: u64,
    pub events: Vec<InteractionEvent>,
}

pub enum ApiError {
    Session { err: SessionError, revision: Option<u64> },
    BadRequest(String),
    Internal(String),
}

impl From<SessionError> for ApiError {
    fn from(err: SessionError) -> Self {
        ApiError::Session { err, revision: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message, revision) = match self {
            ApiError::Session { err, revision } => {
                let (status, code) = match &err {
                    SessionError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
                    SessionError::WrongState { .. } => (StatusCode::CONFLICT, "wrong_state"),
                    SessionError::RevisionConflict { .. } => (StatusCode::CONFLICT, "revision_conflict"),
                    SessionError::EmptyPrompt
                    | SessionError::InvalidOptionIndex { .. }
                    | SessionError::EmptyOtherText
                    | SessionError::EmptySpecification
                    | SessionError::InvalidEdit(_)
                    | SessionError::InvalidConfig(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
                    _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
                };
                let revision = revision.or(match &err {
                    SessionError::RevisionConflict { actual, .. } => Some(*actual),
                    _ => None,
                });
                (status, code, err.to_string(), revision)
            }
            ApiError::BadRequest(message) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message, None),
            ApiError::Internal(message) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", message, None),
        };
        (
            status,
            Json(json!({"error": code, "message": message, "revision": revision})),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))
}

/// Attach the current revision to session errors so clients can resync.
async fn session_call(
    service: Arc<SessionService>,
    id: String,
    op: impl FnOnce(&SessionService, &str) -> Result<Arc<SessionState>, SessionError> + Send + 'static,
) -> ApiResult<Json<SessionView>> {
    blocking(move || {
        op(&service, &id)
            .map(|state| Json(SessionView::from(state.as_ref())))
            .map_err(|err| {
                let revision = service.get(&id).ok().map(|s| s.revision);
                ApiError::Session { err, revision }
            })
    })
    .await?
}

fn parse_body<T: serde::de::DeserializeOwned + Default>(body: &str) -> ApiResult<T> {
    if body.trim().is_empty() {
        return Ok(T::default());
    }
    serde_json::from_str(body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))
}

async fn create_session(
    State(service): State<Arc<SessionService>>,
    Json(request): Json<CreateRequest>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let state = blocking(move || service.create(&request.initial_prompt, request.seed)).await??;
    Ok((StatusCode::CREATED, Json(SessionView::from(state.as_ref()))))
}

async fn list_sessions(State(service): State<Arc<SessionService>>) -> Json<Value> {
    let sessions: Vec<Value> = service
        .list()
        .iter()
        .map(|s| {
            json!({
                "session_id": s.session_id,
                "revision": s.revision,
                "status": s.status.as_str(),
                "initial_prompt": s.initial_prompt,
            })
        })
        .collect();
    Json(json!({ "sessions": sessions }))
}

async fn get_session(
    State(service): State<Arc<SessionService>>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionView>> {
    let state = service.get(&id)?;
    Ok(Json(SessionView::from(state.as_ref())))
}

async fn answer(
    State(service): State<Arc<SessionService>>,
    Path(id): Path<String>,
    body: String,
) -> ApiResult<Json<SessionView>> {
    let request: AnswerRequest = parse_body(&body)?;
    let answer = match (request.option_index, request.other_text) {
        (Some(index), None) => Answer::OptionIndex(index),
        (None, Some(text)) => Answer::OtherText(text),
        _ => {
            return Err(ApiError::BadRequest(
                "send exactly one of option_index or other_text".into(),
            ))
        }
    };
    let expected = request.expected_revision;
    session_call(service, id, move |svc, id| svc.answer(id, answer, expected)).await
}

async fn edit_requirements(
    State(service): State<Arc<SessionService>>,
    Path(id): Path<String>,
    body: String,
) -> ApiResult<Json<SessionView>> {
    let request: EditRequest =
        serde_json::from_str(&body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))?;
    let expected = request.expected_revision;
    session_call(service, id, move |svc, id| svc.edit(id, &request.edits, expected)).await
}

async fn generate(
    State(service): State<Arc<SessionService>>,
    Path(id): Path<String>,
    body: String,
) -> ApiResult<Json<SessionView>> {
    let request: GenerateRequest = parse_body(&body)?;
    session_call(service, id, move |svc, id| svc.generate(id, request.expected_revision)).await
}

async fn close(State(service): State<Arc<SessionService>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    session_call(service, id, |svc, id| svc.close(id)).await
}

async fn events(State(service): State<Arc<SessionService>>, Path(id): Path<String>) -> ApiResult<Json<EventsView>> {
    let state = service.get(&id)?;
    Ok(Json(EventsView {
        session_id: state.session_id.clone(),
        revision: state.revision,
        events: state.events.clone(),
    }))
}

async fn media(State(service): State<Arc<SessionService>>, Path(handle): Path<String>) -> ApiResult<Response> {
    let handle = ImageHandle(handle);
    let not_found = || ApiError::Session {
        err: SessionError::NotFound(format!("media {}", handle.as_str())),
        revision: None,
    };
    let path = service.media_path(&handle).ok_or_else(not_found)?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| not_found())?;
    Ok(([(header::CONTENT_TYPE, content_type(&handle))], bytes).into_response())
}
