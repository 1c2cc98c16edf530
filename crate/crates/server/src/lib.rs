//! HTTP/JSON front end for an analysis session.
//!
//! Routes (all under `/api/v1`):
//!
//! | method | path                         | body                                   |
//! |--------|------------------------------|----------------------------------------|
//! | GET    | `/session`                   | session info                           |
//! | GET    | `/snapshots`                 | snapshot summaries                     |
//! | GET    | `/snapshots/{n}`             | exported snapshot document             |
//! | GET    | `/snapshots/{n}/biplot.svg`  | biplot                                 |
//! | POST   | `/session/iterations`        | `{"exclusions": [..], "reset": false}` |
//! | PUT    | `/session/terms`             | `{"add": [..], "remove": [..]}`        |
//! | GET    | `/events`                    | server-sent `snapshot` / `cycle` events |
//!
//! Failures are `{"code", "message"}` with the status given by the code.

use std::convert::Infallible;
use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::PathRejection;
use axum::extract::{Path, State};
use axum::http::header::{CONTENT_TYPE, LOCATION};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::Stream;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch, Mutex};
use tokio::task::JoinHandle;
use tower_http::cors::{AllowOrigin, CorsLayer};
use trollhunter_core::api::{
    ApiError, ApiErrorCode, IterationRequest, ServerEvent, SnapshotEvent, SnapshotSummary,
    TermsRequest,
};
use trollhunter_core::ingestion::CycleReport;
use trollhunter_core::render::{render_biplot, BiplotStyle};
use trollhunter_core::session::{export_snapshot, AnalysisSnapshot, Session, SessionError};

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    session: Arc<Session>,
    events: broadcast::Sender<ServerEvent>,
    iterating: Arc<Mutex<()>>,
    closing: watch::Receiver<bool>,
    close: Arc<watch::Sender<bool>>,
}

impl AppState {
    pub fn new(session: Arc<Session>) -> Self {
        let (events, _) = broadcast::channel(256);
        let (close, closing) = watch::channel(false);
        AppState {
            session,
            events,
            iterating: Arc::new(Mutex::new(())),
            closing,
            close: Arc::new(close),
        }
    }

    pub fn session(&self) -> &Arc<Session> {
        &self.session
    }

    pub fn publish(&self, event: ServerEvent) {
        // no subscribers is fine
        let _ = self.events.send(event);
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServerEvent> {
        self.events.subscribe()
    }

    /// Ends open event streams so a graceful shutdown can finish.
    pub fn close_streams(&self) {
        let _ = self.close.send(true);
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Exact origin allowed for cross-origin requests. `None` allows any
    /// `localhost` / loopback origin.
    pub allowed_origin: Option<String>,
}

struct Failure(ApiError);

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.0.code.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        Failure(e.into())
    }
}

fn fail(code: ApiErrorCode, message: impl Into<String>) -> Failure {
    Failure(ApiError::new(code, message))
}

type Reply = Result<Response, Failure>;

pub fn router(state: AppState, options: &ServerOptions) -> Router {
    Router::new()
        .route("/api/v1/session", get(session_info))
        .route("/api/v1/session/iterations", post(create_iteration))
        .route("/api/v1/session/terms", put(revise_terms))
        .route("/api/v1/snapshots", get(list_snapshots))
        .route("/api/v1/snapshots/{n}", get(get_snapshot))
        .route("/api/v1/snapshots/{n}/biplot.svg", get(get_biplot))
        .route("/api/v1/events", get(events))
        .fallback(|| async { fail(ApiErrorCode::NotFound, "no such route") })
        .layer(cors(options))
        .with_state(state)
}

fn cors(options: &ServerOptions) -> CorsLayer {
    let origin = match options.allowed_origin.clone() {
        Some(exact) => {
            AllowOrigin::predicate(move |origin, _| origin.as_bytes() == exact.as_bytes())
        }
        None => AllowOrigin::predicate(|origin, _| origin.to_str().is_ok_and(is_loopback_origin)),
    };
    CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST, Method::PUT])
        .allow_headers([CONTENT_TYPE])
}

fn is_loopback_origin(origin: &str) -> bool {
    let Some((_, rest)) = origin.split_once("://") else {
        return false;
    };
    let host = if let Some(v6) = rest.strip_prefix('[') {
        v6.split(']').next().unwrap_or("")
    } else {
        rest.split(':').next().unwrap_or("")
    };
    matches!(host, "localhost" | "127.0.0.1" | "::1")
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    app: Router,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            state.close_streams();
        })
        .await
}

/// Publishes every poller report as a `cycle` event.
pub fn forward_reports(
    state: AppState,
    mut reports: mpsc::UnboundedReceiver<CycleReport>,
) -> JoinHandle<()> {
    tokio::spawn(async move {
        while let Some(r) = reports.recv().await {
            state.publish(ServerEvent::Cycle(r));
        }
    })
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, SessionError> + Send + 'static,
) -> Result<T, Failure> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(Failure::from),
        Err(e) => Err(fail(ApiErrorCode::Internal, format!("worker failed: {e}"))),
    }
}

fn snapshot_response(status: StatusCode, snap: &AnalysisSnapshot) -> Response {
    let location = format!("/api/v1/snapshots/{}", snap.sequence_number);
    let mut resp = (status, export_snapshot(snap)).into_response();
    let headers = resp.headers_mut();
    headers.insert(CONTENT_TYPE, HeaderValue::from_static("application/json"));
    if status == StatusCode::CREATED {
        if let Ok(v) = HeaderValue::from_str(&location) {
            headers.insert(LOCATION, v);
        }
    }
    resp
}

fn lookup(
    state: &AppState,
    n: Result<Path<u64>, PathRejection>,
) -> Result<Arc<AnalysisSnapshot>, Failure> {
    let Path(n) = n.map_err(|e| fail(ApiErrorCode::BadRequest, e.body_text()))?;
    state.session.snapshot(n).ok_or_else(|| {
        fail(
            ApiErrorCode::NotFound,
            format!("snapshot {n} does not exist"),
        )
    })
}

fn parse_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> Result<T, Failure> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body)
        .map_err(|e| fail(ApiErrorCode::BadRequest, format!("invalid body: {e}")))
}

async fn session_info(State(state): State<AppState>) -> Reply {
    Ok(Json(state.session.info()).into_response())
}

async fn list_snapshots(State(state): State<AppState>) -> Reply {
    let list: Vec<SnapshotSummary> = state
        .session
        .history()
        .iter()
        .map(|s| SnapshotSummary {
            sequence_number: s.sequence_number,
            created_at: s.created_at,
            post_count: s.post_count,
            exclusions_in_effect: s.exclusions_in_effect.clone(),
        })
        .collect();
    Ok(Json(list).into_response())
}

async fn get_snapshot(State(state): State<AppState>, n: Result<Path<u64>, PathRejection>) -> Reply {
    let snap = lookup(&state, n)?;
    Ok(snapshot_response(StatusCode::OK, &snap))
}

async fn get_biplot(State(state): State<AppState>, n: Result<Path<u64>, PathRejection>) -> Reply {
    let snap = lookup(&state, n)?;
    let svg = render_biplot(&snap, &BiplotStyle::default())
        .map_err(|e| fail(ApiErrorCode::DegenerateTable, e.to_string()))?;
    Ok(([(CONTENT_TYPE, "image/svg+xml")], svg).into_response())
}

async fn create_iteration(State(state): State<AppState>, body: Bytes) -> Reply {
    let req: IterationRequest = parse_body(&body)?;
    let _turn = state.iterating.lock().await;
    let session = state.session.clone();
    let snap = blocking(move || {
        if req.reset || session.latest().is_none() {
            session.run_iteration(req.exclusions)
        } else {
            session.exclude_and_rerun(req.exclusions)
        }
    })
    .await
    .inspect_err(|e| tracing::warn!(code = ?e.0.code, "iteration failed: {}", e.0.message))?;
    tracing::info!(
        sequence = snap.sequence_number,
        posts = snap.post_count,
        "snapshot recorded"
    );
    state.publish(ServerEvent::Snapshot(SnapshotEvent {
        sequence_number: snap.sequence_number,
    }));
    Ok(snapshot_response(StatusCode::CREATED, &snap))
}

async fn revise_terms(State(state): State<AppState>, body: Bytes) -> Reply {
    let req: TermsRequest = parse_body(&body)?;
    let session = state.session.clone();
    let outcome = blocking(move || session.revise_terms(&req.add, &req.remove)).await?;
    tracing::info!(
        revision = outcome.revision,
        changed = outcome.changed,
        "search terms revised"
    );
    Ok(Json(outcome).into_response())
}

async fn events(
    State(state): State<AppState>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = state.subscribe();
    let stream = futures::stream::unfold(
        (rx, state.closing.clone()),
        |(mut rx, mut closing)| async move {
            loop {
                if *closing.borrow() {
                    return None;
                }
                tokio::select! {
                    got = rx.recv() => match got {
                        Ok(ev) => {
                            let event = Event::default().event(ev.name()).data(ev.data());
                            return Some((Ok(event), (rx, closing)));
                        }
                        Err(broadcast::error::RecvError::Lagged(_)) => continue,
                        Err(broadcast::error::RecvError::Closed) => return None,
                    },
                    _ = closing.changed() => return None,
                }
            }
        },
    );
    Sse::new(stream).keep_alive(KeepAlive::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_origins() {
        assert!(is_loopback_origin("http://localhost:5173"));
        assert!(is_loopback_origin("http://127.0.0.1"));
        assert!(is_loopback_origin("http://[::1]:8080"));
        assert!(!is_loopback_origin("http://localhost.evil.test"));
        assert!(!is_loopback_origin("https://example.test"));
        assert!(!is_loopback_origin("localhost"));
    }
}
