#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use respilot_cli::service::{serve, AppState};
use respilot_core::calibration::{calibrate, generate_synthetic_calibration, CalibrationConfig, GroundTruthWarp};
use respilot_core::hand::{HandModel, KeypointVectorSpec};
use respilot_core::hkvm::HkvmParams;
use respilot_core::retarget::RetargetModels;
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::oneshot;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

pub const RECV_TIMEOUT: Duration = Duration::from_secs(20);

/// Bundled hands with a bundle trained on the seed-0 synthetic set.
pub fn trained_models(warp: &GroundTruthWarp) -> Arc<RetargetModels> {
    let human = HandModel::bundled_human();
    let robot = HandModel::bundled_robot();
    let data = generate_synthetic_calibration(0, warp, &human, &robot, &HkvmParams::default(), &KeypointVectorSpec::default())
        .expect("synthetic set");
    let (bundle, _) = calibrate(&data, &human, &robot, &CalibrationConfig::default()).expect("calibration");
    RetargetModels::new(human, robot, Some(bundle)).expect("models").0
}

pub fn untrained_models() -> Arc<RetargetModels> {
    RetargetModels::new(HandModel::bundled_human(), HandModel::bundled_robot(), None)
        .expect("models")
        .0
}

/// A server on an ephemeral loopback port; stops when dropped.
pub struct TestServer {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
}

impl TestServer {
    pub async fn start(models: Arc<RetargetModels>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").await.expect("bind loopback");
        let addr = listener.local_addr().unwrap();
        let (stop, stopped) = oneshot::channel::<()>();
        tokio::spawn(async move {
            serve(listener, AppState::new(models), async {
                let _ = stopped.await;
            })
            .await
            .expect("server runs");
        });
        TestServer { addr, stop: Some(stop) }
    }

    pub fn ws_url(&self) -> String {
        format!("ws://{}/ws", self.addr)
    }

    pub async fn health(&self) -> Value {
        http_get_json(self.addr, "/health").await
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
    }
}

/// Plain HTTP/1.1 GET over a raw socket, returning the JSON body.
pub async fn http_get_json(addr: SocketAddr, path: &str) -> Value {
    let mut stream = TcpStream::connect(addr).await.expect("connect");
    let request = format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n");
    stream.write_all(request.as_bytes()).await.unwrap();
    let mut raw = Vec::new();
    tokio::time::timeout(RECV_TIMEOUT, stream.read_to_end(&mut raw))
        .await
        .expect("health answered in time")
        .unwrap();
    let text = String::from_utf8(raw).expect("utf-8 response");
    let (head, body) = text.split_once("\r\n\r\n").expect("header terminator");
    assert!(head.starts_with("HTTP/1.1 200"), "unexpected status: {head}");
    serde_json::from_str(body).unwrap_or_else(|e| panic!("health body is not JSON ({e}): {body}"))
}

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl Client {
    pub async fn connect(url: &str) -> Self {
        let (ws, _) = connect_async(url).await.expect("websocket upgrade");
        Client { ws }
    }

    /// Connects and completes the handshake; returns the server hello.
    pub async fn open(url: &str, hello: Value) -> (Self, Value) {
        let mut c = Client::connect(url).await;
        c.send(hello).await;
        let reply = c.recv().await.expect("server hello");
        assert_eq!(reply["kind"], "hello", "handshake failed: {reply}");
        (c, reply)
    }

    pub async fn send(&mut self, frame: Value) {
        self.send_text(&frame.to_string()).await;
    }

    pub async fn send_text(&mut self, text: &str) {
        self.ws.send(Message::text(text)).await.expect("send frame");
    }

    /// Next JSON frame, or `None` once the server closes the connection.
    pub async fn recv(&mut self) -> Option<Value> {
        loop {
            let msg = tokio::time::timeout(RECV_TIMEOUT, self.ws.next())
                .await
                .expect("server replied in time");
            match msg {
                Some(Ok(Message::Text(t))) => return Some(serde_json::from_str(t.as_str()).expect("JSON frame")),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return None,
                Some(Ok(_)) => continue,
            }
        }
    }

    /// True once the server has closed the connection.
    pub async fn closed(&mut self) -> bool {
        self.recv().await.is_none()
    }

    pub async fn state(&mut self, tick: u64, q_h: &[f64]) {
        self.send(json!({"kind": "state", "tick": tick, "q_h": q_h})).await;
    }

    /// Sends one state and waits for its reply.
    pub async fn step(&mut self, tick: u64, q_h: &[f64]) -> Value {
        self.state(tick, q_h).await;
        let reply = self.recv().await.expect("reply");
        assert_eq!(reply["tick"], tick, "reply to the wrong tick: {reply}");
        reply
    }
}

pub fn hello() -> Value {
    json!({"kind": "hello", "protocol_version": 1})
}

pub fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .expect("array")
        .iter()
        .map(|x| x.as_f64().expect("number"))
        .collect()
}

/// One trained bundle per test binary.
pub fn shared_trained() -> Arc<RetargetModels> {
    static MODELS: std::sync::OnceLock<Arc<RetargetModels>> = std::sync::OnceLock::new();
    MODELS.get_or_init(|| trained_models(&GroundTruthWarp::expansion())).clone()
}

/// Human configurations that wander smoothly from the middle of the range.
pub fn human_path(human: &HandModel, n: usize) -> Vec<Vec<f64>> {
    let mid = human.mid_config().0;
    let limits = human.limits();
    (0..n)
        .map(|t| {
            mid.iter()
                .zip(&limits)
                .enumerate()
                .map(|(j, (&m, [lo, hi]))| {
                    let phase = 0.07 * t as f64 + 0.9 * j as f64;
                    (m + 0.3 * (hi - lo) * phase.sin()).clamp(*lo, *hi)
                })
                .collect()
        })
        .collect()
}
