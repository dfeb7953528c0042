//! HTTP surface.
//!
//! | Method | Path | Body | Response |
//! |---|---|---|---|
//! | POST | `/sessions?patch_size&branching&layers&iterations&seed&extractor&classes&subsample` | PNG or TIFF | 201 [`SessionInfo`] |
//! | GET | `/sessions/{id}` | | [`SessionInfo`] |
//! | DELETE | `/sessions/{id}` | | 204 |
//! | POST | `/sessions/{id}/strokes` | [`StrokeBatch`] | [`RevisionReply`] |
//! | POST | `/sessions/{id}/undo` | | [`RevisionReply`] |
//! | GET | `/sessions/{id}/result?kind=segmentation\|probability\|marks&class&rev&wait_ms` | | PNG, `x-revision` header |
//! | GET | `/sessions/{id}/events` | | server-sent [`SessionEvent`] JSON |
//! | POST | `/sessions/{id}/export` | | model file, `x-model-id` header |
//! | POST | `/models` | model file | 201 [`ModelReply`] |
//! | GET | `/models/{id}` | | model file |
//! | POST | `/batch?model&...` [`BatchOptions`] | PNG or TIFF stack | 202 [`BatchStatus`] |
//! | GET | `/batch/{id}` | | [`BatchStatus`] |
//! | GET | `/batch/{id}/files/{name}` | | TIFF or CSV |
//!
//! Errors are JSON `{"error": "..."}` with a 4xx/5xx status.

use std::convert::Infallible;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dictseg::io::{decode_image, encode_label_png, encode_probability_png};
use dictseg::propagation::UpdateOptions;
use dictseg::transfer::TrainedModel;
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use crate::app::{AppState, BatchOptions, BatchStatus, SessionConfig, SessionEvent, SessionInfo};
use crate::error::ApiError;
use crate::stroke::Stroke;

pub fn router(state: AppState) -> Router {
    let limit = state.limits().max_body_bytes;
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/strokes", post(submit_strokes))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/result", get(result))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/export", post(export))
        .route("/models", post(upload_model))
        .route("/models/{id}", get(download_model))
        .route("/batch", post(start_batch))
        .route("/batch/{id}", get(batch_status))
        .route("/batch/{id}/files/{name}", get(batch_file))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrokeBatch {
    #[serde(default)]
    pub strokes: Vec<Stroke>,
    /// Switches the update variant; counts as a mutation.
    #[serde(default)]
    pub options: Option<UpdateOptions>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RevisionReply {
    pub revision: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelReply {
    pub id: u64,
    pub classes: usize,
    pub dictionary_size: usize,
    pub patch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultKind {
    #[default]
    Segmentation,
    Probability,
    Marks,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ResultQuery {
    pub kind: ResultKind,
    /// 1-based class for probability layers.
    pub class: Option<usize>,
    pub rev: u64,
    pub wait_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct ModelParam {
    pub model: u64,
}

fn png(bytes: Vec<u8>, revision: u64) -> Response {
    (
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (
                header::HeaderName::from_static("x-revision"),
                HeaderValue::from(revision),
            ),
        ],
        bytes,
    )
        .into_response()
}

fn binary(bytes: Vec<u8>, content_type: &'static str) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static(content_type))], bytes).into_response()
}

async fn create_session(
    State(app): State<AppState>,
    Query(config): Query<SessionConfig>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let mut pages = decode_image(&body)?;
    if pages.len() != 1 {
        return Err(ApiError::BadRequest(format!(
            "a session needs a single image, got {} pages",
            pages.len()
        )));
    }
    let session = app.create_session(pages.remove(0), config)?;
    Ok((StatusCode::CREATED, Json(session.info())))
}

async fn session_info(State(app): State<AppState>, Path(id): Path<u64>) -> Result<Json<SessionInfo>, ApiError> {
    Ok(Json(app.session(id)?.info()))
}

async fn delete_session(State(app): State<AppState>, Path(id): Path<u64>) -> Result<StatusCode, ApiError> {
    app.remove_session(id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn submit_strokes(
    State(app): State<AppState>,
    Path(id): Path<u64>,
    Json(batch): Json<StrokeBatch>,
) -> Result<Json<RevisionReply>, ApiError> {
    let session = app.session(id)?;
    let (w, h) = (session.image.width(), session.image.height());
    let revision = session.mutate(|st| st.submit(w, h, &batch.strokes, batch.options))?;
    Ok(Json(RevisionReply { revision }))
}

async fn undo(State(app): State<AppState>, Path(id): Path<u64>) -> Result<Json<RevisionReply>, ApiError> {
    let revision = app.session(id)?.mutate(|st| st.undo())?;
    Ok(Json(RevisionReply { revision }))
}

async fn result(
    State(app): State<AppState>,
    Path(id): Path<u64>,
    Query(q): Query<ResultQuery>,
) -> Result<Response, ApiError> {
    let session = app.session(id)?;
    let max_wait = app.limits().max_wait;
    let wait = q
        .wait_ms
        .map_or(max_wait, |ms| Duration::from_millis(ms).min(max_wait));
    let classes = session.config.classes;
    if q.kind == ResultKind::Probability {
        match q.class {
            Some(c) if (1..=classes).contains(&c) => {}
            _ => {
                return Err(ApiError::BadRequest(format!(
                    "probability results need class in 1..={classes}"
                )))
            }
        }
    }
    let (revision, computed) = session.result_at(q.rev, wait).await?;
    let shape = session.shape();
    let bytes = tokio::task::spawn_blocking(move || match q.kind {
        ResultKind::Segmentation => encode_label_png(shape, &computed.segmentation),
        ResultKind::Marks => encode_label_png(shape, &computed.marks),
        ResultKind::Probability => {
            let layer = computed.probabilities.layer(q.class.unwrap_or(1) - 1);
            encode_probability_png(shape, &layer)
        }
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(png(bytes, revision))
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<u64>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = app.session(id)?;
    let rx = session.subscribe();
    let first = session.snapshot_event();
    let to_event = |e: &SessionEvent| {
        Event::default()
            .event("session")
            .json_data(e)
            .expect("events serialize")
    };
    let stream = stream::unfold((Some(first), rx), move |(pending, mut rx)| async move {
        if let Some(e) = pending {
            return Some((Ok(to_event(&e)), (None, rx)));
        }
        loop {
            match rx.recv().await {
                Ok(e) => return Some((Ok(to_event(&e)), (None, rx))),
                Err(RecvError::Lagged(n)) => log::debug!("event stream skipped {n} events"),
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn export(State(app): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let session = app.session(id)?;
    let (model_id, bytes) = app.export(&session).await?;
    let mut resp = binary(bytes, "application/octet-stream");
    resp.headers_mut().insert(
        header::HeaderName::from_static("x-model-id"),
        HeaderValue::from(model_id),
    );
    Ok(resp)
}

async fn upload_model(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<ModelReply>), ApiError> {
    let model = tokio::task::spawn_blocking(move || TrainedModel::from_bytes(&body))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let reply = ModelReply {
        id: 0,
        classes: model.classes(),
        dictionary_size: model.tree().len(),
        patch_size: model.tree().patch().size(),
    };
    let id = app.register_model(model);
    Ok((StatusCode::CREATED, Json(ModelReply { id, ..reply })))
}

async fn download_model(State(app): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let model = app.model(id)?;
    let bytes = tokio::task::spawn_blocking(move || model.to_bytes())
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(binary(bytes, "application/octet-stream"))
}

async fn start_batch(
    State(app): State<AppState>,
    Query(q): Query<ModelParam>,
    Query(options): Query<BatchOptions>,
    body: Bytes,
) -> Result<(StatusCode, Json<BatchStatus>), ApiError> {
    let slices = tokio::task::spawn_blocking(move || decode_image(&body))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let job = app.start_batch(q.model, slices, options)?;
    Ok((StatusCode::ACCEPTED, Json(job.status())))
}

async fn batch_status(State(app): State<AppState>, Path(id): Path<u64>) -> Result<Json<BatchStatus>, ApiError> {
    Ok(Json(app.job(id)?.status()))
}

async fn batch_file(
    State(app): State<AppState>,
    Path((id, name)): Path<(u64, String)>,
) -> Result<Response, ApiError> {
    let job = app.job(id)?;
    let bytes = job
        .file(&name)
        .ok_or_else(|| ApiError::NotFound(format!("file {name} of batch job {id}")))?;
    let content_type = if name.ends_with(".csv") { "text/csv" } else { "image/tiff" };
    Ok(binary(bytes.as_ref().clone(), content_type))
}
