use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use flipfree::admm::ConstraintUpdate;
use flipfree::fixtures;
use flipfree::mesh::Mesh;
use flipfree_service::protocol::{decode_f64s, unflatten};
use flipfree_service::{serve, AppState, Health, ServerMessage, SessionConfig, SessionState, VERSION};
use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

const TIMEOUT: Duration = Duration::from_secs(60);

fn bar() -> Mesh {
    fixtures::grid(20, 4, 5.0, 1.0)
}

async fn start(mesh: Mesh, config: SessionConfig) -> (SocketAddr, Arc<AppState>) {
    let state = AppState::new(mesh, config).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, state.clone()));
    (addr, state)
}

enum Frame {
    Json(ServerMessage),
    Binary(Vec<f64>),
}

struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl Client {
    async fn connect(addr: SocketAddr, session: Option<&str>) -> Self {
        let url = match session {
            Some(id) => format!("ws://{addr}/session?session={id}"),
            None => format!("ws://{addr}/session"),
        };
        let (ws, _) = connect_async(url).await.unwrap();
        Self { ws }
    }

    async fn send(&mut self, json: &str) {
        self.ws.send(Message::Text(json.into())).await.unwrap();
    }

    async fn frame(&mut self) -> Frame {
        loop {
            let msg = tokio::time::timeout(TIMEOUT, self.ws.next())
                .await
                .expect("server went quiet")
                .expect("connection closed")
                .unwrap();
            match msg {
                Message::Text(t) => return Frame::Json(serde_json::from_str(&t).unwrap()),
                Message::Binary(b) => return Frame::Binary(decode_f64s(&b).unwrap()),
                _ => {}
            }
        }
    }

    async fn json(&mut self) -> ServerMessage {
        match self.frame().await {
            Frame::Json(m) => m,
            Frame::Binary(_) => panic!("unexpected binary frame"),
        }
    }

    /// Reads until `pred` matches, returning every message seen on the way.
    async fn until(&mut self, mut pred: impl FnMut(&ServerMessage) -> bool) -> Vec<ServerMessage> {
        let mut seen = Vec::new();
        loop {
            let m = self.json().await;
            let done = pred(&m);
            seen.push(m);
            if done {
                return seen;
            }
        }
    }

    async fn until_ack(&mut self, name: &str) -> (ServerMessage, Vec<ServerMessage>) {
        let seen = self
            .until(|m| match m {
                ServerMessage::Status { ack: Some(a), .. } | ServerMessage::Error { ack: Some(a), .. } => a == name,
                _ => false,
            })
            .await;
        (seen.last().unwrap().clone(), seen)
    }

    /// Handshake: mesh message, then the session's current status.
    async fn handshake(&mut self) -> (String, usize, usize) {
        match self.json().await {
            ServerMessage::Mesh {
                session,
                vertices,
                faces,
                binary: false,
            } => (session, vertices.unwrap().len(), faces.len()),
            other => panic!("expected mesh, got {other:?}"),
        }
    }
}

fn handles_json(pairs: &[(usize, [f64; 2])]) -> String {
    let h: Vec<String> = pairs
        .iter()
        .map(|(v, p)| format!(r#"{{"vertex":{v},"position":[{:?},{:?}]}}"#, p[0], p[1]))
        .collect();
    format!(r#"{{"type":"set_constraints","handles":[{}]}}"#, h.join(","))
}

fn updates(msgs: &[ServerMessage]) -> Vec<(u64, bool, f64)> {
    msgs.iter()
        .filter_map(|m| match m {
            ServerMessage::Update {
                iter, is_final, sent_ms, ..
            } => Some((*iter, *is_final, *sent_ms)),
            _ => None,
        })
        .collect()
}

fn final_update(msgs: &[ServerMessage]) -> Option<&ServerMessage> {
    msgs.iter().rev().find(|m| matches!(m, ServerMessage::Update { is_final: true, .. }))
}

fn is_final(m: &ServerMessage) -> bool {
    matches!(m, ServerMessage::Update { is_final: true, .. })
}

#[tokio::test]
async fn healthz_reports_version() {
    let (addr, _state) = start(bar(), SessionConfig::default()).await;
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(b"GET /healthz HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    assert!(buf.starts_with("HTTP/1.1 200"));
    let body = &buf[buf.find("\r\n\r\n").unwrap() + 4..];
    let h: Health = serde_json::from_str(body.trim()).unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.version, VERSION);
}

#[tokio::test]
async fn handshake_sends_mesh_and_status() {
    let m = bar();
    let (n, f) = (m.num_vertices(), m.num_elements());
    let (addr, state) = start(m, SessionConfig::default()).await;
    let mut c = Client::connect(addr, None).await;
    let (session, nv, nf) = c.handshake().await;
    assert_eq!((nv, nf), (n, f));
    match c.json().await {
        ServerMessage::Status { session: s, .. } => assert_eq!(s, session),
        other => panic!("expected status, got {other:?}"),
    }
    state.shutdown();
}

#[tokio::test]
async fn pinning_at_rest_converges_to_rest() {
    let m = bar();
    let rest: Vec<[f64; 2]> = m.vertices().iter().map(|p| [p[0], p[1]]).collect();
    let (addr, state) = start(m, SessionConfig::default()).await;
    let mut c = Client::connect(addr, None).await;
    c.handshake().await;
    c.send(&handles_json(&[(7, rest[7])])).await;
    let (ack, _) = c.until_ack("set_constraints").await;
    assert!(matches!(ack, ServerMessage::Status { constraint_update: Some(_), .. }));
    let seen = c.until(is_final).await;
    let Some(ServerMessage::Update { positions, flips, .. }) = final_update(&seen) else {
        unreachable!()
    };
    assert_eq!(*flips, 0);
    let dev = positions
        .as_ref()
        .unwrap()
        .iter()
        .zip(&rest)
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    assert!(dev <= 1e-6, "deviation {dev:e}");
    state.shutdown();
}

/// Pins the left end of a bar and drags the right end upward by 20% of the
/// bounding-box diagonal in small steps, as an interactive client would.
#[tokio::test]
async fn scripted_bar_drag() {
    let m = bar();
    let eps_abs = SessionConfig::default().solver.eps_abs;
    let drag = 0.2 * m.bbox_diagonal();
    let rest: Vec<[f64; 2]> = m.vertices().iter().map(|p| [p[0], p[1]]).collect();
    let left: Vec<usize> = (0..rest.len()).filter(|&v| rest[v][0] == 0.0).collect();
    let right: Vec<usize> = (0..rest.len()).filter(|&v| rest[v][0] == 5.0).collect();
    let handles = |t: f64| -> Vec<(usize, [f64; 2])> {
        left.iter()
            .map(|&v| (v, rest[v]))
            .chain(right.iter().map(|&v| (v, [rest[v][0], rest[v][1] + t * drag])))
            .collect()
    };
    let (addr, state) = start(m, SessionConfig::default()).await;
    let mut c = Client::connect(addr, None).await;
    c.handshake().await;

    let mut all = Vec::new();
    let steps = 10;
    for s in 1..=steps {
        c.send(&handles_json(&handles(s as f64 / steps as f64))).await;
        let (ack, seen) = c.until_ack("set_constraints").await;
        all.extend(seen);
        let expected = if s == 1 {
            ConstraintUpdate::Refactorized
        } else {
            ConstraintUpdate::RhsOnly
        };
        match ack {
            ServerMessage::Status {
                constraint_update: Some(u),
                ..
            } => assert_eq!(u, expected, "step {s}"),
            other => panic!("unexpected ack {other:?}"),
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let seen = c.until(is_final).await;
    all.extend(seen);

    let ups = updates(&all);
    assert!(!ups.is_empty());
    assert!(ups.windows(2).all(|w| w[0].0 < w[1].0), "iterations not increasing");
    let Some(ServerMessage::Update { positions, flips, .. }) = final_update(&all) else {
        unreachable!()
    };
    assert_eq!(*flips, 0);
    let pos = positions.as_ref().unwrap();
    for (v, target) in handles(1.0) {
        let d = ((pos[v][0] - target[0]).powi(2) + (pos[v][1] - target[1]).powi(2)).sqrt();
        assert!(d <= eps_abs, "vertex {v} off target by {d:e}");
    }
    state.shutdown();
}

#[tokio::test]
async fn updates_are_throttled_and_monotone() {
    let m = bar();
    let rest: Vec<[f64; 2]> = m.vertices().iter().map(|p| [p[0], p[1]]).collect();
    let config = SessionConfig::default();
    let throttle_ms = config.throttle.as_secs_f64() * 1e3;
    let (addr, state) = start(m, config).await;
    let mut c = Client::connect(addr, None).await;
    c.handshake().await;
    c.send(&handles_json(&[(0, rest[0]), (104, [rest[104][0] + 1.0, rest[104][1] + 0.5])])).await;
    let seen = c.until(is_final).await;
    let ups = updates(&seen);
    assert!(ups.len() >= 2);
    assert!(ups.windows(2).all(|w| w[0].0 < w[1].0));
    for w in ups.windows(2) {
        if !w[1].1 {
            assert!(w[1].2 - w[0].2 >= throttle_ms, "updates {:?} and {:?} too close", w[0], w[1]);
        }
    }
    state.shutdown();
}

#[tokio::test]
async fn handle_set_changes_and_bad_input() {
    let m = bar();
    let rest: Vec<[f64; 2]> = m.vertices().iter().map(|p| [p[0], p[1]]).collect();
    let (addr, state) = start(m, SessionConfig::default()).await;
    let mut c = Client::connect(addr, None).await;
    c.handshake().await;

    c.send(&handles_json(&[(0, rest[0]), (3, rest[3])])).await;
    c.until_ack("set_constraints").await;
    c.send(&handles_json(&[(0, rest[0]), (3, [rest[3][0], 0.2])])).await;
    let (ack, _) = c.until_ack("set_constraints").await;
    assert!(matches!(ack, ServerMessage::Status { constraint_update: Some(ConstraintUpdate::RhsOnly), .. }));
    c.send(&handles_json(&[(0, rest[0]), (3, rest[3]), (9, rest[9])])).await;
    let (ack, _) = c.until_ack("set_constraints").await;
    assert!(matches!(
        ack,
        ServerMessage::Status { constraint_update: Some(ConstraintUpdate::Refactorized), .. }
    ));

    c.send(&handles_json(&[(3, rest[3]), (3, rest[3])])).await;
    let (ack, _) = c.until_ack("set_constraints").await;
    assert!(matches!(&ack, ServerMessage::Error { message, .. } if message.contains("duplicate")));
    c.send(&handles_json(&[(100_000, [0.0, 0.0])])).await;
    let (ack, _) = c.until_ack("set_constraints").await;
    assert!(matches!(ack, ServerMessage::Error { .. }));

    c.send("{not json").await;
    c.until(|m| matches!(m, ServerMessage::Error { ack: None, message } if message.contains("malformed")))
        .await;
    c.send(r#"{"type":"set_energy","kind":"arap"}"#).await;
    let (ack, _) = c.until_ack("set_energy").await;
    assert!(matches!(ack, ServerMessage::Error { .. }));
    c.send(r#"{"type":"set_energy","kind":"sg"}"#).await;
    let (ack, _) = c.until_ack("set_energy").await;
    assert!(matches!(ack, ServerMessage::Status { .. }));
    // the session keeps going after all of the above
    c.send(r#"{"type":"pause"}"#).await;
    let (ack, _) = c.until_ack("pause").await;
    assert!(matches!(ack, ServerMessage::Status { .. }));
    state.shutdown();
}

#[tokio::test]
async fn pause_holds_state_and_resume_continues() {
    let m = bar();
    let rest: Vec<[f64; 2]> = m.vertices().iter().map(|p| [p[0], p[1]]).collect();
    let mut config = SessionConfig::default();
    config.throttle = Duration::from_millis(5);
    let (addr, state) = start(m, config).await;
    let mut c = Client::connect(addr, None).await;
    c.handshake().await;
    c.send(&handles_json(&[(0, rest[0]), (104, [rest[104][0] + 2.0, rest[104][1] + 1.0])])).await;
    c.until_ack("set_constraints").await;
    c.send(r#"{"type":"pause"}"#).await;
    let (ack, _) = c.until_ack("pause").await;
    let ServerMessage::Status { state: s, iter: paused_at, .. } = ack else {
        panic!("pause not acknowledged")
    };
    assert_eq!(s, SessionState::Paused);

    c.send(r#"{"type":"resume"}"#).await;
    let (ack, before) = c.until_ack("resume").await;
    assert!(updates(&before).iter().all(|u| u.0 <= paused_at));
    assert!(matches!(ack, ServerMessage::Status { state: SessionState::Running, .. }));
    let after = c.until(|m| matches!(m, ServerMessage::Update { iter, .. } if *iter > paused_at)).await;
    assert!(!updates(&after).is_empty());
    state.shutdown();
}

#[tokio::test]
async fn reconnect_keeps_state_until_reset() {
    let m = bar();
    let rest: Vec<[f64; 2]> = m.vertices().iter().map(|p| [p[0], p[1]]).collect();
    let target = [rest[104][0] + 0.3, rest[104][1] + 0.4];
    let (addr, state) = start(m, SessionConfig::default()).await;
    let mut c = Client::connect(addr, None).await;
    let (id, _, _) = c.handshake().await;
    c.send(&handles_json(&[(0, rest[0]), (104, target)])).await;
    c.until_ack("set_constraints").await;
    let seen = c.until(is_final).await;
    let last_iter = updates(&seen).last().unwrap().0;
    drop(c);

    let mut c = Client::connect(addr, Some(&id)).await;
    let (id2, _, _) = c.handshake().await;
    assert_eq!(id, id2);
    let status = c.json().await;
    assert!(matches!(status, ServerMessage::Status { state: SessionState::Converged, .. }), "{status:?}");
    match c.json().await {
        ServerMessage::Update { iter, positions, .. } => {
            assert_eq!(iter, last_iter);
            assert_eq!(positions.unwrap()[104], target);
        }
        other => panic!("expected update, got {other:?}"),
    }

    c.send(r#"{"type":"reset"}"#).await;
    let (ack, _) = c.until_ack("reset").await;
    assert!(matches!(ack, ServerMessage::Status { state: SessionState::Running, .. }));
    let seen = c.until(is_final).await;
    let ups = updates(&seen);
    assert!(ups.iter().all(|u| u.0 >= last_iter));
    assert!(ups.windows(2).all(|w| w[0].0 < w[1].0));

    let mut other = Client::connect(addr, Some("nope")).await;
    assert!(matches!(other.json().await, ServerMessage::Error { .. }));
    state.shutdown();
}

#[tokio::test]
async fn large_arrays_use_binary_frames() {
    let m = bar();
    let n = m.num_vertices();
    let rest: Vec<[f64; 2]> = m.vertices().iter().map(|p| [p[0], p[1]]).collect();
    let mut config = SessionConfig::default();
    config.binary_threshold = 10;
    let (addr, state) = start(m, config).await;
    let mut c = Client::connect(addr, None).await;
    match c.json().await {
        ServerMessage::Mesh { vertices: None, binary: true, .. } => {}
        other => panic!("expected binary mesh header, got {other:?}"),
    }
    let Frame::Binary(v) = c.frame().await else {
        panic!("expected binary frame")
    };
    assert_eq!(unflatten(&v), rest);

    let target = [rest[104][0] + 0.25, rest[104][1] - 0.125];
    c.send(&handles_json(&[(0, rest[0]), (104, target)])).await;
    let mut acked = false;
    loop {
        match c.frame().await {
            Frame::Json(ServerMessage::Update {
                binary, positions, is_final, ..
            }) => {
                assert!(binary && positions.is_none());
                let Frame::Binary(p) = c.frame().await else {
                    panic!("update without its binary frame")
                };
                assert_eq!(p.len(), 2 * n);
                if is_final && acked {
                    let p = unflatten(&p);
                    assert_eq!(p[104], target);
                    assert_eq!(p[0], rest[0]);
                    break;
                }
            }
            Frame::Json(ServerMessage::Status { ack: Some(_), .. }) => acked = true,
            Frame::Json(_) => {}
            Frame::Binary(_) => panic!("binary frame without header"),
        }
    }
    state.shutdown();
}

#[test]
fn non_planar_meshes_are_rejected() {
    assert!(AppState::new(fixtures::hemisphere(3, 0.1, 1), SessionConfig::default()).is_err());
    assert!(AppState::new(fixtures::cube_tets(1), SessionConfig::default()).is_err());
}
