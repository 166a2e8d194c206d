//! WebSocket session service with a plain HTTP health endpoint.
//!
//! Each connection gets one [`RetargetSession`] driven by a blocking worker.
//! Incoming states queue behind at most the tick being solved: a newer state
//! replaces any queued one, which is answered with a `superseded` error.
//! Control frames keep their arrival order relative to states. Outgoing frames
//! go through a small queue that drops the oldest result when the client
//! falls behind.

use std::collections::{BTreeMap, VecDeque};
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use respilot_core::hand::{Finger, JointConfig};
use respilot_core::retarget::{RetargetModels, RetargetSession, RetargeterKind, SessionConfig};
use tokio::net::TcpListener;
use tokio::sync::Notify;

use crate::protocol::{
    ClientHello, ClientMessage, ErrorCode, HealthReport, ModelInfo, ParamUpdate, RollingLatency, ServerHello,
    ServerMessage, SessionHealth, TickResult, PROTOCOL_VERSION,
};

/// Results waiting for a slow client before the oldest is dropped.
pub const OUTBOUND_DEPTH: usize = 4;

/// How long a new connection may take to send its hello.
pub const HELLO_TIMEOUT: Duration = Duration::from_secs(10);

struct SessionEntry {
    retargeter: RetargeterKind,
    constrained: Vec<Finger>,
    superseded: u64,
    latency: RollingLatency,
}

/// State shared by every connection; the models are read-only.
pub struct AppState {
    models: Arc<RetargetModels>,
    bundle_hash: Option<String>,
    started: Instant,
    next_id: AtomicU64,
    sessions: Mutex<BTreeMap<u64, SessionEntry>>,
    overall: Mutex<RollingLatency>,
}

impl AppState {
    pub fn new(models: Arc<RetargetModels>) -> Arc<Self> {
        let bundle_hash = models.bundle.as_ref().map(|b| b.content_hash());
        Arc::new(AppState {
            models,
            bundle_hash,
            started: Instant::now(),
            next_id: AtomicU64::new(1),
            sessions: Mutex::new(BTreeMap::new()),
            overall: Mutex::new(RollingLatency::default()),
        })
    }

    pub fn health(&self) -> HealthReport {
        let sessions = self.sessions.lock().expect("session table");
        HealthReport {
            status: "ok".into(),
            protocol_version: PROTOCOL_VERSION,
            uptime_s: self.started.elapsed().as_secs_f64(),
            human_model: self.models.human.name().into(),
            human_model_hash: self.models.human.content_hash(),
            robot_model: self.models.robot.name().into(),
            robot_model_hash: self.models.robot.content_hash(),
            bundle_hash: self.bundle_hash.clone(),
            sessions_active: sessions.len(),
            sessions_total: self.next_id.load(Ordering::SeqCst) - 1,
            latency: self.overall.lock().expect("latency").stats(),
            sessions: sessions
                .iter()
                .map(|(&id, e)| SessionHealth {
                    session_id: id,
                    retargeter: e.retargeter,
                    constrained: e.constrained.clone(),
                    superseded: e.superseded,
                    latency: e.latency.stats(),
                })
                .collect(),
        }
    }

    /// Retargeters the loaded bundle supports.
    pub fn available(&self) -> Vec<RetargeterKind> {
        RetargeterKind::ALL
            .into_iter()
            .filter(|k| match (&self.models.bundle, k) {
                (None, k) => !k.needs_bundle(),
                (Some(b), RetargeterKind::GpDirect) => b.direct.is_some(),
                _ => true,
            })
            .collect()
    }

    fn default_kind(&self) -> RetargeterKind {
        if self.models.bundle.is_some() {
            RetargeterKind::ResGp
        } else {
            RetargeterKind::Hkvm
        }
    }

    fn update_session(&self, id: u64, f: impl FnOnce(&mut SessionEntry)) {
        if let Some(e) = self.sessions.lock().expect("session table").get_mut(&id) {
            f(e);
        }
    }

    /// Checks a client hello against what this server serves.
    fn check_hello(&self, hello: &ClientHello) -> Result<RetargeterKind, String> {
        let (human, robot) = (&self.models.human, &self.models.robot);
        if hello.protocol_version != PROTOCOL_VERSION {
            return Err(format!(
                "protocol version {} is not supported; this server speaks {PROTOCOL_VERSION}",
                hello.protocol_version
            ));
        }
        if let Some(n) = hello.human_dof.filter(|&n| n != human.dof()) {
            return Err(format!("client expects {n} human joints, server model '{}' has {}", human.name(), human.dof()));
        }
        if let Some(n) = hello.robot_dof.filter(|&n| n != robot.dof()) {
            return Err(format!("client expects {n} robot joints, server model '{}' has {}", robot.name(), robot.dof()));
        }
        if let Some(h) = hello.human_model_hash.as_ref().filter(|h| **h != human.content_hash()) {
            return Err(format!("human model hash {h} does not match the served model"));
        }
        if let Some(h) = hello.robot_model_hash.as_ref().filter(|h| **h != robot.content_hash()) {
            return Err(format!("robot model hash {h} does not match the served model"));
        }
        if let Some(h) = &hello.bundle_hash {
            if self.bundle_hash.as_ref() != Some(h) {
                return Err(format!("bundle hash {h} does not match the served bundle"));
            }
        }
        let kind = hello.retargeter.unwrap_or_else(|| self.default_kind());
        if !self.available().contains(&kind) {
            return Err(format!("retargeter {kind} is not available on this server"));
        }
        Ok(kind)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health_handler))
        .route("/ws", get(ws_handler))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn health_handler(State(state): State<Arc<AppState>>) -> Json<HealthReport> {
    Json(state.health())
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| handle_session(socket, state))
}

/// Outgoing frames of one connection.
struct Outbox {
    frames: Mutex<VecDeque<ServerMessage>>,
    notify: Notify,
}

impl Outbox {
    fn new() -> Arc<Self> {
        Arc::new(Outbox {
            frames: Mutex::new(VecDeque::new()),
            notify: Notify::new(),
        })
    }

    /// Queues a frame. Results beyond [`OUTBOUND_DEPTH`] evict the oldest
    /// queued result; other frames are never dropped.
    fn push(&self, msg: ServerMessage) {
        let mut q = self.frames.lock().expect("outbox");
        if matches!(msg, ServerMessage::Result(_)) {
            let results = q.iter().filter(|m| matches!(m, ServerMessage::Result(_))).count();
            if results >= OUTBOUND_DEPTH {
                if let Some(i) = q.iter().position(|m| matches!(m, ServerMessage::Result(_))) {
                    q.remove(i);
                }
            }
        }
        q.push_back(msg);
        drop(q);
        self.notify.notify_one();
    }

    fn drain(&self) -> Vec<ServerMessage> {
        self.frames.lock().expect("outbox").drain(..).collect()
    }
}

enum Job {
    State { tick: u64, q_h: JointConfig },
    Toggle { finger: Finger, on: bool },
    SetRetargeter(RetargeterKind),
    SetParams(ParamUpdate),
}

/// Work for the session worker, in arrival order.
struct Inbox {
    jobs: Mutex<(VecDeque<Job>, bool)>,
    ready: Condvar,
}

impl Inbox {
    fn new() -> Arc<Self> {
        Arc::new(Inbox {
            jobs: Mutex::new((VecDeque::new(), false)),
            ready: Condvar::new(),
        })
    }

    /// Queues a job. A state removes every state still waiting; their ticks
    /// are returned so the caller can answer them.
    fn push(&self, job: Job) -> Vec<u64> {
        let mut guard = self.jobs.lock().expect("inbox");
        let mut dropped = Vec::new();
        if matches!(job, Job::State { .. }) {
            guard.0.retain(|j| match j {
                Job::State { tick, .. } => {
                    dropped.push(*tick);
                    false
                }
                _ => true,
            });
        }
        guard.0.push_back(job);
        drop(guard);
        self.ready.notify_one();
        dropped
    }

    fn close(&self) {
        self.jobs.lock().expect("inbox").1 = true;
        self.ready.notify_all();
    }

    /// Next job, or `None` once closed and empty.
    fn pop(&self) -> Option<Job> {
        let mut guard = self.jobs.lock().expect("inbox");
        loop {
            if let Some(job) = guard.0.pop_front() {
                return Some(job);
            }
            if guard.1 {
                return None;
            }
            guard = self.ready.wait(guard).expect("inbox");
        }
    }
}

/// Closes the inbox when the connection task ends, including when it is
/// cancelled at shutdown, so the blocking worker always exits.
struct CloseOnDrop(Arc<Inbox>);

impl Drop for CloseOnDrop {
    fn drop(&mut self) {
        self.0.close();
    }
}

fn run_worker(mut session: RetargetSession, id: u64, inbox: Arc<Inbox>, outbox: Arc<Outbox>, state: Arc<AppState>) {
    while let Some(job) = inbox.pop() {
        match job {
            Job::State { tick, q_h } => {
                let reply = session.step(&q_h).and_then(|r| {
                    let timings = r.timings.clone();
                    let result =
                        TickResult::new(tick, session.kind(), session.constrained(), &state.models.robot, r)?;
                    state.overall.lock().expect("latency").record(&timings);
                    state.update_session(id, |e| e.latency.record(&timings));
                    Ok(result)
                });
                outbox.push(match reply {
                    Ok(result) => ServerMessage::Result(Box::new(result)),
                    Err(e) => ServerMessage::error(ErrorCode::Solver, e.to_string(), Some(tick)),
                });
            }
            Job::Toggle { finger, on } => match session.set_constraint(finger, on) {
                Ok(()) => {
                    let constrained = session.constrained();
                    state.update_session(id, |e| e.constrained = constrained);
                }
                Err(e) => outbox.push(ServerMessage::error(ErrorCode::InvalidRequest, e.to_string(), None)),
            },
            Job::SetRetargeter(kind) => {
                // Parameters carry over; sessions start from the bundle's settings.
                let config = SessionConfig { kind, ..session.config().clone() };
                match session.reconfigure(config) {
                    Ok(()) => state.update_session(id, |e| e.retargeter = kind),
                    Err(e) => outbox.push(ServerMessage::error(ErrorCode::InvalidRequest, e.to_string(), None)),
                }
            }
            Job::SetParams(p) => {
                let mut config = session.config().clone();
                if let Some(v) = p.smoothing {
                    config.smoothing = v;
                }
                if let Some(v) = p.constraint_distance {
                    config.constraint_distance = v;
                }
                if let Some(v) = p.beta {
                    config.hkvm.beta = v;
                }
                if let Some(v) = p.gamma {
                    config.hkvm.gamma = v;
                }
                if let Err(e) = session.reconfigure(config) {
                    outbox.push(ServerMessage::error(ErrorCode::InvalidRequest, e.to_string(), None));
                }
            }
        }
    }
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_text().into())).await.is_ok()
}

async fn reject(mut socket: WebSocket, message: String) {
    log::info!("closing connection: {message}");
    let _ = send(&mut socket, &ServerMessage::error(ErrorCode::Protocol, message, None)).await;
    let _ = socket.send(Message::Close(None)).await;
}

/// Tick id carried by a frame that failed to parse, if any.
fn tick_of(text: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(text).ok()?.get("tick")?.as_u64()
}

async fn handle_session(mut socket: WebSocket, state: Arc<AppState>) {
    let hello = match tokio::time::timeout(HELLO_TIMEOUT, socket.recv()).await {
        Ok(Some(Ok(Message::Text(text)))) => match serde_json::from_str::<ClientMessage>(&text) {
            Ok(ClientMessage::Hello(h)) => h,
            Ok(_) => return reject(socket, "the first frame must be a hello".into()).await,
            Err(e) => return reject(socket, format!("malformed hello: {e}")).await,
        },
        Ok(Some(Ok(_))) => return reject(socket, "the first frame must be a text hello".into()).await,
        Ok(_) => return,
        Err(_) => return reject(socket, "no hello received".into()).await,
    };
    let kind = match state.check_hello(&hello) {
        Ok(k) => k,
        Err(msg) => return reject(socket, msg).await,
    };
    let session = match RetargetSession::new(
        state.models.clone(),
        SessionConfig::for_kind(kind, state.models.bundle.as_ref()),
    ) {
        Ok(s) => s,
        Err(e) => return reject(socket, e.to_string()).await,
    };
    let id = state.next_id.fetch_add(1, Ordering::SeqCst);
    let server_hello = ServerMessage::Hello(ServerHello {
        protocol_version: PROTOCOL_VERSION,
        session_id: id,
        human: ModelInfo::of(&state.models.human),
        robot: ModelInfo::of(&state.models.robot),
        bundle_hash: state.bundle_hash.clone(),
        retargeters: state.available(),
        retargeter: kind,
        constraint_distance: session.config().constraint_distance,
    });
    if !send(&mut socket, &server_hello).await {
        return;
    }
    state.sessions.lock().expect("session table").insert(
        id,
        SessionEntry {
            retargeter: kind,
            constrained: Vec::new(),
            superseded: 0,
            latency: RollingLatency::default(),
        },
    );
    log::info!("session {id} opened with {kind}");

    let (mut sink, mut stream) = socket.split();
    let inbox = Inbox::new();
    let closer = CloseOnDrop(inbox.clone());
    let outbox = Outbox::new();
    let worker = {
        let (inbox, outbox, state) = (inbox.clone(), outbox.clone(), state.clone());
        tokio::task::spawn_blocking(move || run_worker(session, id, inbox, outbox, state))
    };
    let (closing_tx, mut closing_rx) = tokio::sync::watch::channel(false);
    let writer = {
        let outbox = outbox.clone();
        tokio::spawn(async move {
            loop {
                let closing = *closing_rx.borrow();
                for msg in outbox.drain() {
                    let close = matches!(&msg, ServerMessage::Error(e) if e.code == ErrorCode::Protocol);
                    if sink.send(Message::Text(msg.to_text().into())).await.is_err() {
                        return;
                    }
                    if close {
                        let _ = sink.send(Message::Close(None)).await;
                        return;
                    }
                }
                if closing {
                    let _ = sink.send(Message::Close(None)).await;
                    return;
                }
                tokio::select! {
                    _ = outbox.notify.notified() => {}
                    _ = closing_rx.changed() => {}
                }
            }
        })
    };

    let human_dof = state.models.human.dof();
    let mut last_tick: Option<u64> = None;
    while let Some(frame) = stream.next().await {
        let text = match frame {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(Message::Binary(_)) => {
                outbox.push(ServerMessage::error(ErrorCode::Malformed, "binary frames are not accepted", None));
                continue;
            }
            Ok(_) => continue,
        };
        let msg = match serde_json::from_str::<ClientMessage>(&text) {
            Ok(m) => m,
            Err(e) => {
                outbox.push(ServerMessage::error(ErrorCode::Malformed, e.to_string(), tick_of(&text)));
                continue;
            }
        };
        match msg {
            ClientMessage::Hello(_) => {
                outbox.push(ServerMessage::error(ErrorCode::Protocol, "hello was already exchanged", None));
                break;
            }
            ClientMessage::Health => outbox.push(ServerMessage::Health(state.health())),
            ClientMessage::State(s) => {
                if last_tick.is_some_and(|t| s.tick <= t) {
                    outbox.push(ServerMessage::error(
                        ErrorCode::StaleTick,
                        format!("tick {} does not follow {}", s.tick, last_tick.unwrap_or_default()),
                        Some(s.tick),
                    ));
                    continue;
                }
                last_tick = Some(s.tick);
                if s.q_h.len() != human_dof || s.q_h.iter().any(|v| !v.is_finite()) {
                    outbox.push(ServerMessage::error(
                        ErrorCode::InvalidState,
                        format!("state needs {human_dof} finite angles, got {}", s.q_h.len()),
                        Some(s.tick),
                    ));
                    continue;
                }
                let dropped = inbox.push(Job::State { tick: s.tick, q_h: JointConfig(s.q_h) });
                if !dropped.is_empty() {
                    state.update_session(id, |e| e.superseded += dropped.len() as u64);
                }
                for tick in dropped {
                    outbox.push(ServerMessage::error(
                        ErrorCode::Superseded,
                        format!("tick {tick} was replaced by tick {}", s.tick),
                        Some(tick),
                    ));
                }
            }
            ClientMessage::ToggleConstraint(t) => {
                inbox.push(Job::Toggle { finger: t.finger, on: t.on });
            }
            ClientMessage::SetRetargeter(s) => {
                inbox.push(Job::SetRetargeter(s.retargeter));
            }
            ClientMessage::SetParams(p) => {
                inbox.push(Job::SetParams(p));
            }
        }
    }

    drop(closer);
    let _ = worker.await;
    let _ = closing_tx.send(true);
    let _ = writer.await;
    state.sessions.lock().expect("session table").remove(&id);
    log::info!("session {id} closed");
}
