//! HTTP front end for drag sessions.
//!
//! | method | path                      | body / query                         |
//! |--------|---------------------------|--------------------------------------|
//! | POST   | `/sessions`               | scenario JSON                        |
//! | GET    | `/sessions`               |                                      |
//! | GET    | `/sessions/{id}`          |                                      |
//! | POST   | `/sessions/{id}/control`  | `{"action":"step","n":N}`, `run`, `pause` |
//! | GET    | `/sessions/{id}/frame`    | `?heatmap=i&layer=overlay\|only`     |
//! | GET    | `/sessions/{id}/events`   | server-sent events                   |
//! | GET    | `/sessions/{id}/record`   |                                      |

mod worker;

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use pointdrag::engine::DragSession;
use pointdrag::record::SessionStatus;
use pointdrag::render::{draw_trajectories, field_image, heatmap_layer, overlay_heatmap};
use pointdrag::scenario::ScenarioFile;
use pointdrag::DragError;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, watch};

pub use worker::{Command, Event, PointView, SessionState, Snapshot};

struct Entry {
    id: String,
    created_at: u64,
    commands: std::sync::Mutex<std::sync::mpsc::Sender<Command>>,
    published: watch::Receiver<Arc<Snapshot>>,
    events: broadcast::Sender<Event>,
}

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<Entry>>>>,
    counter: Arc<AtomicU64>,
    /// Records of finished sessions are written here.
    out_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(out_dir: Option<PathBuf>) -> Self {
        Self {
            out_dir,
            ..Default::default()
        }
    }

    fn get(&self, id: &str) -> Result<Arc<Entry>, ApiError> {
        self.sessions
            .read()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                details: Vec::new(),
            },
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session {id}"))
    }
}

impl From<DragError> for ApiError {
    fn from(e: DragError) -> Self {
        match e {
            DragError::Validation(details) => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: ErrorBody {
                    error: "invalid scenario".into(),
                    details,
                },
            },
            DragError::Json(e) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            DragError::TrainingDiverged { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
            }
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionHandle {
    pub id: String,
    pub status: SessionStatus,
    pub created_at: u64,
    pub scenario: String,
}

impl Entry {
    fn handle(&self) -> SessionHandle {
        let snap = self.published.borrow();
        SessionHandle {
            id: self.id.clone(),
            status: snap.state.status,
            created_at: self.created_at,
            scenario: snap.state.scenario.clone(),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_state))
        .route("/sessions/{id}/control", post(control))
        .route("/sessions/{id}/frame", get(frame))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/record", get(record))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, out_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(out_dir))).await
}

async fn create_session(
    State(app): State<AppState>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionHandle>), ApiError> {
    let text = std::str::from_utf8(&body)
        .map_err(|_| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "body is not UTF-8"))?;
    let scenario = ScenarioFile::from_json(text)?;
    scenario.validate()?;
    // tracker training happens here, before the handle is returned
    let session = tokio::task::spawn_blocking(move || DragSession::from_scenario(scenario))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;

    let n = app.counter.fetch_add(1, Ordering::Relaxed) + 1;
    let id = format!("s{n:04}");
    let created_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let (cmd_tx, cmd_rx) = std::sync::mpsc::channel();
    let (pub_tx, pub_rx) = watch::channel(Arc::new(worker::snapshot(&id, created_at, &session)));
    let (ev_tx, _) = broadcast::channel(1024);
    let entry = Arc::new(Entry {
        id: id.clone(),
        created_at,
        commands: std::sync::Mutex::new(cmd_tx),
        published: pub_rx,
        events: ev_tx.clone(),
    });
    if session.status().is_terminal() {
        if let Some(dir) = &app.out_dir {
            std::fs::create_dir_all(dir)
                .map_err(DragError::from)
                .and_then(|_| session.record().save(&dir.join(format!("{id}.json"))))?;
        }
    }
    let w = worker::Worker {
        id: id.clone(),
        created_at,
        session,
        commands: cmd_rx,
        published: pub_tx,
        events: ev_tx,
        out_dir: app.out_dir.clone(),
    };
    std::thread::Builder::new()
        .name(format!("session-{id}"))
        .spawn(move || w.run())
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let handle = entry.handle();
    app.sessions.write().expect("session table").insert(id, entry);
    Ok((StatusCode::CREATED, Json(handle)))
}

async fn list_sessions(State(app): State<AppState>) -> Json<Vec<SessionHandle>> {
    let mut out: Vec<SessionHandle> = app
        .sessions
        .read()
        .expect("session table")
        .values()
        .map(|e| e.handle())
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Json(out)
}

async fn get_state(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionState>, ApiError> {
    let entry = app.get(&id)?;
    let snap = entry.published.borrow().clone();
    Ok(Json(snap.state.clone()))
}

async fn record(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<pointdrag::record::RunRecord>, ApiError> {
    let entry = app.get(&id)?;
    let snap = entry.published.borrow().clone();
    Ok(Json(snap.record.clone()))
}

async fn control(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionHandle>), ApiError> {
    let entry = app.get(&id)?;
    let cmd: Command = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    if let Command::Step { n: 0 } = cmd {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "n must be >= 1"));
    }
    let status = entry.published.borrow().state.status;
    if status.is_terminal() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("session {id} is {}", status.as_str()),
        ));
    }
    entry
        .commands
        .lock()
        .expect("command queue")
        .send(cmd)
        .map_err(|_| ApiError::new(StatusCode::GONE, format!("session {id} worker stopped")))?;
    Ok((StatusCode::ACCEPTED, Json(entry.handle())))
}

#[derive(Debug, Default, Deserialize)]
pub struct FrameQuery {
    pub heatmap: Option<usize>,
    /// `overlay` (default) or `only`.
    pub layer: Option<String>,
}

async fn frame(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FrameQuery>,
) -> Result<Response, ApiError> {
    let entry = app.get(&id)?;
    let snap = entry.published.borrow().clone();
    let only = match q.layer.as_deref() {
        None | Some("overlay") => false,
        Some("only") => true,
        Some(other) => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("layer must be overlay or only, got {other}"),
            ))
        }
    };
    if let Some(i) = q.heatmap {
        if i >= snap.scores.len() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("heatmap point {i} does not exist"),
            ));
        }
    }
    let png = tokio::task::spawn_blocking(move || -> pointdrag::Result<Vec<u8>> {
        let (_, h, w) = snap.field.chw()?;
        let img = match (q.heatmap, only) {
            (Some(i), true) => heatmap_layer(w, h, &snap.scores[i].0, &snap.scores[i].1),
            (heat, _) => {
                let mut img = field_image(&snap.field)?;
                if let Some(i) = heat {
                    overlay_heatmap(&mut img, &snap.scores[i].0, &snap.scores[i].1);
                }
                let paths: Vec<_> = snap
                    .state
                    .points
                    .iter()
                    .map(|p| (p.trajectory.clone(), p.t))
                    .collect();
                draw_trajectories(&mut img, &paths);
                img
            }
        };
        img.png_bytes()
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

fn sse_event(ev: &Event) -> SseEvent {
    let (name, data) = match ev {
        Event::Step { record } => ("step", serde_json::to_string(record)),
        Event::Status { status } => ("status", serde_json::to_string(status)),
    };
    SseEvent::default()
        .event(name)
        .data(data.unwrap_or_else(|e| format!("\"{e}\"")))
}

/// Replays the steps already taken, then follows live. Ends after the
/// terminal status message.
async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let entry = app.get(&id)?;
    // subscribe before reading the snapshot so no step falls in between
    let live = entry.events.subscribe();
    let snap = entry.published.borrow().clone();
    let seen = snap.state.step;
    let mut backlog: Vec<Event> = snap
        .state
        .steps
        .iter()
        .map(|r| Event::Step { record: r.clone() })
        .collect();
    let done = snap.state.status.is_terminal();
    if done {
        backlog.push(Event::Status {
            status: snap.state.status,
        });
    }
    let live = stream::unfold((live, done), move |(mut rx, done)| async move {
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(Event::Step { record }) if record.step <= seen => continue,
                Ok(ev) => {
                    let end = matches!(ev, Event::Status { .. });
                    return Some((ev, (rx, end)));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let all = stream::iter(backlog)
        .chain(live)
        .map(|ev| Ok(sse_event(&ev)));
    Ok(Sse::new(all).keep_alive(KeepAlive::default()))
}
