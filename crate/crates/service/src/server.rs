//! HTTP lifecycle endpoints and the WebSocket session stream.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::error::ServiceError;
use crate::protocol::{parse_client, ClientMessage, ServerEnvelope, ServerMessage};
use crate::scene::Scene;
use crate::session::{Phase, Session};

struct Entry {
    session: Mutex<Session>,
    stream: broadcast::Sender<String>,
}

/// Live sessions keyed by id. Each session has a single writer (its mutex)
/// and a broadcast channel for read-only subscribers.
#[derive(Clone, Default)]
pub struct Registry {
    inner: Arc<Mutex<RegistryInner>>,
    log_dir: Option<PathBuf>,
}

#[derive(Default)]
struct RegistryInner {
    next_id: u64,
    sessions: HashMap<String, Arc<Entry>>,
}

impl Registry {
    pub fn new(log_dir: Option<PathBuf>) -> Self {
        Self {
            inner: Arc::default(),
            log_dir,
        }
    }

    pub fn create(&self, scene: Scene) -> Result<String, ServiceError> {
        let mut inner = self.inner.lock().expect("registry lock");
        inner.next_id += 1;
        let id = format!("session-{}", inner.next_id);
        let session = match &self.log_dir {
            Some(dir) => Session::create_logged(scene, &dir.join(format!("{id}.jsonl")))?,
            None => Session::create(scene)?,
        };
        let (stream, _) = broadcast::channel(256);
        inner.sessions.insert(
            id.clone(),
            Arc::new(Entry {
                session: Mutex::new(session),
                stream,
            }),
        );
        Ok(id)
    }

    fn entry(&self, id: &str) -> Result<Arc<Entry>, ServiceError> {
        self.inner
            .lock()
            .expect("registry lock")
            .sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Runs `f` as the session's single writer.
    pub fn with_session<R>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<R, ServiceError>,
    ) -> Result<R, ServiceError> {
        let entry = self.entry(id)?;
        let mut session = entry.session.lock().expect("session lock");
        f(&mut session)
    }

    pub fn subscribe(&self, id: &str) -> Result<broadcast::Receiver<String>, ServiceError> {
        Ok(self.entry(id)?.stream.subscribe())
    }

    fn publish(&self, id: &str, message: ServerMessage) {
        if let Ok(entry) = self.entry(id) {
            // no subscribers is fine
            let _ = entry.stream.send(ServerEnvelope::new(message).to_json());
        }
    }

    /// Applies one client message and returns the resulting server messages.
    /// Successful state changes are also published to every subscriber.
    pub fn apply(&self, id: &str, message: ClientMessage) -> Result<Vec<ServerMessage>, ServiceError> {
        let out = self.with_session(id, |s| {
            let mut out = Vec::new();
            match message {
                ClientMessage::Ping => out.push(ServerMessage::Pong),
                ClientMessage::Tick { count } => {
                    for _ in 0..count.max(1) {
                        let update = s.tick()?;
                        out.push(ServerMessage::Frame {
                            seq: s.events().len() as u64 - 1,
                            update,
                        });
                    }
                }
                ClientMessage::Steer {
                    translate_mm,
                    rotate_deg,
                } => {
                    let record = s.steer(ClientMessage::steer_command(translate_mm, rotate_deg))?;
                    out.push(ServerMessage::Steered {
                        seq: s.events().len() as u64 - 1,
                        record,
                    });
                }
                ClientMessage::InsertAndGrade => {
                    let report = s.insert_and_grade()?;
                    out.push(ServerMessage::Grade {
                        // the report precedes the closing phase change
                        seq: s.events().len() as u64 - 2,
                        report,
                    });
                }
            }
            Ok(out)
        })?;
        for m in &out {
            if !matches!(m, ServerMessage::Pong) {
                self.publish(id, m.clone());
            }
        }
        Ok(out)
    }

    /// [`Registry::apply`] with failures turned into an error message.
    pub fn handle(&self, id: &str, message: ClientMessage) -> Vec<ServerMessage> {
        self.apply(id, message).unwrap_or_else(|e| {
            vec![ServerMessage::Error {
                code: e.code().into(),
                message: e.to_string(),
            }]
        })
    }
}

struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::IllegalTransition { .. } => StatusCode::CONFLICT,
            ServiceError::SceneValidation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::MalformedLog { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody {
            error: self.0.code().into(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub phase: Phase,
    pub views: Vec<String>,
    pub exposure_s: f64,
    pub events: u64,
}

#[derive(Debug, Deserialize)]
pub struct ShotBody {
    pub label: String,
}

#[derive(Debug, Deserialize)]
pub struct SteerBody {
    pub translate_mm: [f64; 3],
    pub rotate_deg: [f64; 3],
}

fn status(id: &str, s: &Session) -> SessionStatus {
    SessionStatus {
        session_id: id.to_string(),
        phase: s.phase(),
        views: s.views().iter().map(|v| v.view_id.clone()).collect(),
        exposure_s: s.exposure_s(),
        events: s.events().len() as u64,
    }
}

async fn create(State(reg): State<Registry>, body: String) -> Result<(StatusCode, Json<SessionStatus>), ApiError> {
    let scene = Scene::from_json(&body)?;
    let id = reg.create(scene)?;
    let st = reg.with_session(&id, |s| Ok(status(&id, s)))?;
    Ok((StatusCode::CREATED, Json(st)))
}

async fn get_status(State(reg): State<Registry>, Path(id): Path<String>) -> ApiResult<SessionStatus> {
    Ok(Json(reg.with_session(&id, |s| Ok(status(&id, s)))?))
}

async fn attach(State(reg): State<Registry>, Path(id): Path<String>) -> ApiResult<SessionStatus> {
    Ok(Json(reg.with_session(&id, |s| {
        s.attach_reference()?;
        Ok(status(&id, s))
    })?))
}

async fn shot(
    State(reg): State<Registry>,
    Path(id): Path<String>,
    Json(body): Json<ShotBody>,
) -> ApiResult<vfnav_core::calibration::CalibrationReport> {
    Ok(Json(reg.with_session(&id, |s| s.take_shot(&body.label))?))
}

async fn navigate(
    State(reg): State<Registry>,
    Path(id): Path<String>,
) -> ApiResult<crate::session::NavigationStart> {
    Ok(Json(reg.with_session(&id, |s| s.start_navigation())?))
}

fn single(reg: &Registry, id: &str, message: ClientMessage) -> Result<ServerMessage, ApiError> {
    Ok(reg.apply(id, message)?.into_iter().next().expect("one reply per request"))
}

async fn tick(State(reg): State<Registry>, Path(id): Path<String>) -> ApiResult<ServerMessage> {
    Ok(Json(single(&reg, &id, ClientMessage::Tick { count: 1 })?))
}

async fn steer(
    State(reg): State<Registry>,
    Path(id): Path<String>,
    Json(body): Json<SteerBody>,
) -> ApiResult<ServerMessage> {
    Ok(Json(single(
        &reg,
        &id,
        ClientMessage::Steer {
            translate_mm: body.translate_mm,
            rotate_deg: body.rotate_deg,
        },
    )?))
}

async fn insert(State(reg): State<Registry>, Path(id): Path<String>) -> ApiResult<ServerMessage> {
    Ok(Json(single(&reg, &id, ClientMessage::InsertAndGrade)?))
}

async fn log(State(reg): State<Registry>, Path(id): Path<String>) -> Result<String, ApiError> {
    Ok(reg.with_session(&id, |s| Ok(s.log_jsonl()))?)
}

async fn stream(
    State(reg): State<Registry>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let hello = reg.with_session(&id, |s| {
        Ok(ServerMessage::Hello {
            session_id: id.clone(),
            phase: s.phase(),
            events: s.events().len() as u64,
        })
    })?;
    let updates = reg.subscribe(&id)?;
    Ok(ws.on_upgrade(move |socket| run_socket(socket, reg, id, hello, updates)))
}

async fn run_socket(
    mut socket: WebSocket,
    reg: Registry,
    id: String,
    hello: ServerMessage,
    mut updates: broadcast::Receiver<String>,
) {
    let send = |m: ServerMessage| Message::Text(ServerEnvelope::new(m).to_json().into());
    if socket.send(send(hello)).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let Some(Ok(msg)) = incoming else { break };
                let Message::Text(text) = msg else { continue };
                let replies = match parse_client(text.as_str()) {
                    Ok(m) => {
                        let reg = reg.clone();
                        let id = id.clone();
                        tokio::task::spawn_blocking(move || reg.handle(&id, m)).await.unwrap_or_default()
                    }
                    Err(e) => vec![e],
                };
                // state changes arrive through the broadcast; only errors and
                // pongs are private to this client
                for r in replies {
                    if matches!(r, ServerMessage::Error { .. } | ServerMessage::Pong)
                        && socket.send(send(r)).await.is_err()
                    {
                        return;
                    }
                }
            }
            update = updates.recv() => {
                match update {
                    Ok(text) => {
                        if socket.send(Message::Text(text.into())).await.is_err() {
                            break;
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        let lag = ServerMessage::Error {
                            code: "lagged".into(),
                            message: format!("{n} messages dropped; refetch the log"),
                        };
                        if socket.send(send(lag)).await.is_err() {
                            break;
                        }
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                }
            }
        }
    }
}

pub fn router(registry: Registry) -> Router {
    Router::new()
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", get(get_status))
        .route("/v1/sessions/{id}/attach", post(attach))
        .route("/v1/sessions/{id}/shots", post(shot))
        .route("/v1/sessions/{id}/navigation", post(navigate))
        .route("/v1/sessions/{id}/tick", post(tick))
        .route("/v1/sessions/{id}/steer", post(steer))
        .route("/v1/sessions/{id}/insert", post(insert))
        .route("/v1/sessions/{id}/log", get(log))
        .route("/v1/sessions/{id}/stream", get(stream))
        .with_state(registry)
}
