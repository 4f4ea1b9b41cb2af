//! HTTP routes: `/healthz` and the `/session` websocket.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use flipfree::mesh::Mesh;
use futures::stream::SplitSink;
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use crate::protocol::{encode_f64s, flatten, ClientMessage, ServerMessage};
use crate::session::{Outgoing, Session, SessionConfig, UpdateSnapshot};
use crate::ServiceError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Shared server state: the mesh every session deforms and the live sessions.
#[derive(Debug)]
pub struct AppState {
    mesh: Arc<Mesh>,
    config: SessionConfig,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(mesh: Mesh, config: SessionConfig) -> Result<Arc<Self>, ServiceError> {
        if mesh.element_dim() != 2 || !mesh.is_planar() {
            return Err(ServiceError::NotPlanar);
        }
        config.solver.validate()?;
        Ok(Arc::new(Self {
            mesh: Arc::new(mesh),
            config,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }))
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    fn create_session(&self) -> Result<Arc<Session>, ServiceError> {
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let s = Session::start(id.clone(), self.mesh.clone(), self.config.clone())?;
        self.sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, s.clone());
        Ok(s)
    }

    /// Stops every session worker.
    pub fn shutdown(&self) {
        let sessions: Vec<_> = self
            .sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .drain()
            .map(|(_, s)| s)
            .collect();
        for s in sessions {
            s.shutdown();
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Deserialize)]
pub struct SessionQuery {
    /// Reattach to an existing session instead of starting one.
    pub session: Option<String>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/session", get(session_upgrade))
        .with_state(state)
}

async fn healthz() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: VERSION.into(),
    })
}

async fn session_upgrade(
    ws: WebSocketUpgrade,
    Query(q): Query<SessionQuery>,
    State(state): State<Arc<AppState>>,
) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state, q.session))
        .into_response()
}

/// Serves on `listener` until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Blocking entry point: binds `addr` and serves forever.
pub fn run(addr: SocketAddr, mesh: Mesh, config: SessionConfig) -> Result<(), ServiceError> {
    let state = AppState::new(mesh, config)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on ws://{}/session", listener.local_addr()?);
        serve(listener, state).await
    })?;
    Ok(())
}

type Sink = SplitSink<WebSocket, Message>;

async fn send_json(sink: &mut Sink, msg: &ServerMessage) -> Result<(), axum::Error> {
    let text = serde_json::to_string(msg).expect("server messages serialize");
    sink.send(Message::Text(text.into())).await
}

async fn send_mesh(sink: &mut Sink, session: &Session) -> Result<(), axum::Error> {
    let mesh = session.mesh();
    let vertices: Vec<[f64; 2]> = mesh.vertices().iter().map(|p| [p[0], p[1]]).collect();
    let faces = mesh.elements().map(|e| [e[0], e[1], e[2]]).collect();
    let binary = vertices.len() > session.config().binary_threshold;
    let msg = ServerMessage::Mesh {
        session: session.id().to_owned(),
        vertices: (!binary).then(|| vertices.clone()),
        faces,
        binary,
    };
    send_json(sink, &msg).await?;
    if binary {
        sink.send(Message::Binary(encode_f64s(&flatten(&vertices)).into())).await?;
    }
    Ok(())
}

async fn send_update(sink: &mut Sink, session: &Session, u: &UpdateSnapshot) -> Result<(), axum::Error> {
    let binary = u.positions.len() > session.config().binary_threshold;
    let msg = ServerMessage::Update {
        iter: u.iter,
        positions: (!binary).then(|| u.positions.as_ref().clone()),
        energy: u.energy,
        flips: u.flips,
        e_prim: u.e_prim,
        e_dual: u.e_dual,
        binary,
        is_final: u.is_final,
        sent_ms: session.elapsed_ms(),
    };
    send_json(sink, &msg).await?;
    if binary {
        sink.send(Message::Binary(encode_f64s(&flatten(&u.positions)).into())).await?;
    }
    Ok(())
}

async fn connection(socket: WebSocket, state: Arc<AppState>, requested: Option<String>) {
    let (mut sink, mut stream) = socket.split();
    let session = match requested {
        Some(id) => match state.session(&id) {
            Some(s) => s,
            None => {
                let msg = ServerMessage::Error {
                    message: format!("unknown session {id:?}"),
                    ack: None,
                };
                let _ = send_json(&mut sink, &msg).await;
                let _ = sink.close().await;
                return;
            }
        },
        None => match state.create_session() {
            Ok(s) => s,
            Err(e) => {
                let msg = ServerMessage::Error {
                    message: e.to_string(),
                    ack: None,
                };
                let _ = send_json(&mut sink, &msg).await;
                return;
            }
        },
    };
    let generation = session.attach();

    let reader_session = session.clone();
    let mut reader = tokio::spawn(async move {
        while let Some(Ok(frame)) = stream.next().await {
            let reply_error = |message: String| {
                reader_session.outbox().push(ServerMessage::Error { message, ack: None })
            };
            match frame {
                Message::Text(t) => match serde_json::from_str::<ClientMessage>(&t) {
                    Ok(msg) => reader_session.send(msg),
                    Err(e) => reply_error(format!("malformed message: {e}")),
                },
                Message::Binary(_) => reply_error("binary frames are not accepted from clients".into()),
                Message::Close(_) => break,
                Message::Ping(_) | Message::Pong(_) => {}
            }
        }
    });

    let writer = async {
        send_mesh(&mut sink, &session).await?;
        let (status, update) = session.outbox().resync();
        if let Some(s) = status {
            send_json(&mut sink, &s).await?;
        }
        if let Some(u) = update {
            send_update(&mut sink, &session, &u).await?;
        }
        let throttle = session.config().throttle;
        let mut next_update = Instant::now() + throttle;
        while session.is_attached(generation) {
            let notified = session.outbox().notified();
            let (items, pending) = session.outbox().drain(Instant::now() >= next_update);
            for item in items {
                match item {
                    Outgoing::Message(m) => send_json(&mut sink, &m).await?,
                    Outgoing::Update(u) => {
                        send_update(&mut sink, &session, &u).await?;
                        if !u.is_final {
                            next_update = Instant::now() + throttle;
                        }
                    }
                }
            }
            if pending {
                tokio::select! {
                    _ = notified => {}
                    _ = tokio::time::sleep_until(next_update) => {}
                }
            } else {
                notified.await;
            }
        }
        Ok::<(), axum::Error>(())
    };

    tokio::select! {
        _ = writer => {}
        _ = &mut reader => {}
    }
    reader.abort();
}
