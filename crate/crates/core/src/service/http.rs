//! JSON-over-HTTP API and server-sent verdict stream.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::Router;
use axum::extract::{Path, Query, State};
use axum::http::{StatusCode, header};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use futures::Stream;
use serde::Deserialize;
use serde_json::json;

use super::Monitor;
use crate::error::ServiceError;
use crate::layout::{Scene, render_svg};
use crate::store::structure_from_json;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NoStructure => StatusCode::CONFLICT,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Structure(_) => StatusCode::BAD_REQUEST,
            ServiceError::Layout(_) | ServiceError::Journal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, axum::Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
struct SceneQuery {
    format: Option<String>,
}

fn scene_response(scene: Scene, q: &SceneQuery) -> Response {
    if q.format.as_deref() == Some("svg") {
        ([(header::CONTENT_TYPE, "image/svg+xml")], render_svg(&scene)).into_response()
    } else {
        axum::Json(scene).into_response()
    }
}

pub fn router(monitor: Arc<Monitor>) -> Router {
    Router::new()
        .route("/api/structure", put(put_structure).get(get_structure))
        .route("/api/events", post(post_events))
        .route("/api/events/{rid}", get(get_event))
        .route("/api/overview", get(get_overview))
        .route("/api/groups/{gid}/scene", get(group_scene))
        .route("/api/forms/{fid}/requests/{rid}/scene", get(form_scene))
        .route("/api/forms/{fid}/requests/{rid}/controls/{order}/scene", get(control_scene))
        .route("/api/stream", get(stream))
        .with_state(monitor)
}

async fn put_structure(State(m): State<Arc<Monitor>>, body: String) -> Result<Response, ServiceError> {
    let structure = structure_from_json(&body)?;
    let id = m.replace_structure(structure)?;
    Ok(axum::Json(json!({ "snapshot_id": id })).into_response())
}

async fn get_structure(State(m): State<Arc<Monitor>>) -> Result<Response, ServiceError> {
    let s = m.structure().ok_or(ServiceError::NoStructure)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], crate::store::structure_to_json(&s)).into_response())
}

async fn post_events(State(m): State<Arc<Monitor>>, body: String) -> Result<Response, ServiceError> {
    let out = tokio::task::spawn_blocking(move || m.ingest_events(&body))
        .await
        .map_err(|e| ServiceError::Journal(std::io::Error::other(e)))??;
    Ok(axum::Json(out).into_response())
}

async fn get_event(State(m): State<Arc<Monitor>>, Path(rid): Path<String>) -> Result<Response, ServiceError> {
    Ok(axum::Json(m.event(&rid)?.as_ref().clone()).into_response())
}

async fn get_overview(State(m): State<Arc<Monitor>>) -> Result<Response, ServiceError> {
    Ok(axum::Json(m.overview()?).into_response())
}

async fn group_scene(
    State(m): State<Arc<Monitor>>,
    Path(gid): Path<String>,
    Query(q): Query<SceneQuery>,
) -> Result<Response, ServiceError> {
    Ok(scene_response(Scene::Overview(m.group_scene(&gid)?), &q))
}

async fn form_scene(
    State(m): State<Arc<Monitor>>,
    Path((fid, rid)): Path<(String, String)>,
    Query(q): Query<SceneQuery>,
) -> Result<Response, ServiceError> {
    Ok(scene_response(Scene::Form(m.form_scene(&fid, &rid)?), &q))
}

async fn control_scene(
    State(m): State<Arc<Monitor>>,
    Path((fid, rid, order)): Path<(String, String, usize)>,
    Query(q): Query<SceneQuery>,
) -> Result<Response, ServiceError> {
    Ok(scene_response(Scene::Control(m.control_scene(&fid, &rid, order)?), &q))
}

async fn stream(State(m): State<Arc<Monitor>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = m.subscribe();
    let events = futures::stream::unfold(rx, |mut rx| async move {
        let e = rx.recv().await?;
        let data = serde_json::to_string(e.as_ref()).unwrap_or_default();
        Some((Ok(Event::default().event("verdict").id(e.seq.to_string()).data(data)), rx))
    });
    Sse::new(events).keep_alive(KeepAlive::default())
}

/// Serves the API on `addr` until ctrl-c.
pub async fn serve(monitor: Arc<Monitor>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(monitor))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
