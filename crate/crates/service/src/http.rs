//! Axum routes over [`Service`]. Store work runs on the blocking pool.

use std::future::Future;
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::error::ApiError;
use crate::service::{ApiResult, CaptureMeta, Service};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

type Svc = State<Arc<Service>>;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(code = %self.code, "{}", self.message);
        }
        (status, Json(self)).into_response()
    }
}

/// JSON body whose rejections are reported as [`ApiError`].
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiError::validation(e.body_text())),
        }
    }
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn json<T: Serialize>(r: ApiResult<T>) -> Response {
    match r {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

fn created<T: Serialize>(r: ApiResult<T>) -> Response {
    match r {
        Ok(v) => (StatusCode::CREATED, Json(v)).into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(svc: Arc<Service>, max_upload_bytes: usize) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/models/reload", post(reload_models))
        .route("/cases", post(create_case))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/captures", post(submit_capture))
        .route("/cases/{id}/annotation", post(annotate))
        .route("/cases/{id}/annotation/revision", post(revise))
        .route("/cases/{id}/predict", post(predict))
        .route("/cases/{id}/feedback", post(feedback))
        .route("/cases/{id}/flag", post(flag))
        .route("/cases/{id}/biopsy-order", post(order_biopsy))
        .route("/cases/{id}/histopathology", post(histopathology))
        .route("/cases/{id}/close", post(close))
        .route("/review/queue", get(queue))
        .route("/summary", get(summary))
        .route("/export", get(export))
        .fallback(|| async { ApiError::not_found("no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(405, "method_not_allowed", "method not allowed on this route")
        })
        .layer(DefaultBodyLimit::max(max_upload_bytes))
        .with_state(svc)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    svc: Arc<Service>,
    max_upload_bytes: usize,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(svc, max_upload_bytes))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn health(State(svc): Svc) -> Response {
    Json(serde_json::json!({"status": "ok", "models": svc.model_info()})).into_response()
}

async fn models(State(svc): Svc) -> Response {
    Json(svc.model_info()).into_response()
}

async fn reload_models(State(svc): Svc) -> Response {
    json(blocking(move || svc.reload_models()).await)
}

async fn create_case(State(svc): Svc, Body(req): Body<crate::service::CreateCase>) -> Response {
    created(blocking(move || svc.create_case(req)).await)
}

async fn get_case(State(svc): Svc, Path(id): Path<String>) -> Response {
    json(blocking(move || svc.get_case(&id)).await)
}

async fn read_capture(mut form: Multipart) -> ApiResult<(Vec<u8>, CaptureMeta)> {
    let mut image = None;
    let mut meta = None;
    let field_err = |e: axum::extract::multipart::MultipartError| {
        let status = e.status();
        if status == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(413, "payload_too_large", e.body_text())
        } else {
            ApiError::validation(e.body_text())
        }
    };
    while let Some(field) = form.next_field().await.map_err(field_err)? {
        match field.name() {
            Some("image") => image = Some(field.bytes().await.map_err(field_err)?.to_vec()),
            Some("metadata") => {
                let text = field.text().await.map_err(field_err)?;
                let parsed: CaptureMeta = serde_json::from_str(&text)
                    .map_err(|e| ApiError::validation(format!("metadata: {e}")))?;
                meta = Some(parsed);
            }
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ApiError::validation("multipart part `image` is missing"))?;
    let meta = meta.ok_or_else(|| ApiError::validation("multipart part `metadata` is missing"))?;
    Ok((image, meta))
}

async fn submit_capture(
    State(svc): Svc,
    Path(id): Path<String>,
    headers: HeaderMap,
    form: Result<Multipart, MultipartRejection>,
) -> Response {
    let key = match headers.get(IDEMPOTENCY_HEADER).map(|v| v.to_str()) {
        None => None,
        Some(Ok(k)) if !k.trim().is_empty() => Some(k.trim().to_string()),
        Some(_) => return ApiError::validation("Idempotency-Key must be non-empty visible ASCII").into_response(),
    };
    let form = match form {
        Ok(f) => f,
        Err(e) => return ApiError::validation(e.body_text()).into_response(),
    };
    let (bytes, meta) = match read_capture(form).await {
        Ok(v) => v,
        Err(e) => return e.into_response(),
    };
    created(blocking(move || svc.submit_capture(&id, &bytes, meta, key.as_deref())).await)
}

async fn annotate(State(svc): Svc, Path(id): Path<String>, Body(req): Body<crate::service::AnnotateRequest>) -> Response {
    json(blocking(move || svc.annotate(&id, req)).await)
}

async fn revise(State(svc): Svc, Path(id): Path<String>, Body(req): Body<crate::service::AnnotateRequest>) -> Response {
    json(blocking(move || svc.revise_annotation(&id, req)).await)
}

async fn predict(State(svc): Svc, Path(id): Path<String>) -> Response {
    json(blocking(move || svc.predict_case(&id)).await)
}

async fn feedback(State(svc): Svc, Path(id): Path<String>, Body(req): Body<crate::service::FeedbackRequest>) -> Response {
    json(blocking(move || svc.record_feedback(&id, req)).await)
}

async fn flag(State(svc): Svc, Path(id): Path<String>) -> Response {
    json(blocking(move || svc.flag(&id)).await)
}

async fn order_biopsy(
    State(svc): Svc,
    Path(id): Path<String>,
    Body(req): Body<crate::service::BiopsyOrderRequest>,
) -> Response {
    json(blocking(move || svc.order_biopsy(&id, req)).await)
}

async fn histopathology(
    State(svc): Svc,
    Path(id): Path<String>,
    Body(req): Body<crate::service::HistopathologyRequest>,
) -> Response {
    json(blocking(move || svc.attach_histopathology(&id, req)).await)
}

async fn close(State(svc): Svc, Path(id): Path<String>, Body(req): Body<crate::service::CloseRequest>) -> Response {
    json(blocking(move || svc.close(&id, req)).await)
}

#[derive(Deserialize)]
struct QueueQuery {
    state: Option<String>,
}

async fn queue(State(svc): Svc, q: Result<Query<QueueQuery>, QueryRejection>) -> Response {
    let state = match q {
        Ok(Query(q)) => q.state,
        Err(e) => return ApiError::validation(e.body_text()).into_response(),
    };
    json(blocking(move || svc.review_queue(state.as_deref())).await)
}

async fn summary(State(svc): Svc) -> Response {
    json(blocking(move || svc.summary()).await)
}

async fn export(State(svc): Svc) -> Response {
    match blocking(move || svc.export_archive()).await {
        Ok(bytes) => (
            [
                (header::CONTENT_TYPE, "application/x-tar"),
                (header::CONTENT_DISPOSITION, "attachment; filename=\"dermtriage-export.tar\""),
            ],
            bytes,
        )
            .into_response(),
        Err(e) => e.into_response(),
    }
}
