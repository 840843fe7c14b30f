//! Browser-facing gateway. A human joins a world by opening a socket on
//! `/agent`; the gateway pushes observations as JSON events and turns the
//! human's `act` events into agent replies.
//!
//! Events, server to client:
//! `{"type":"observe","session":s,"message":{..}}`,
//! `{"type":"act_request","session":s}`,
//! `{"type":"error","session":s,"error":"..."}`,
//! `{"type":"end","session":s,"mode":"chat"}`.
//! Client to server: `{"type":"act","message":{..}}`.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use parlance_core::agents::{Agent, AgentError};
use parlance_core::Message;
use serde_json::{json, Value};
use thiserror::Error;
use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::protocol::WebSocket;
use tungstenite::Message as WsMessage;

use crate::remote::DEFAULT_ACT_TIMEOUT;

pub const AGENT_PATH: &str = "/agent";
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("no client connected within {0:?}")]
    Timeout(Duration),
    #[error("websocket handshake failed: {0}")]
    Handshake(String),
}

/// What the world wants from the human; sent with the `end` event so the
/// client can decide whether to show a rating widget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SessionMode {
    #[default]
    Chat,
    Collector,
    Evaluator,
}

impl SessionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionMode::Chat => "chat",
            SessionMode::Collector => "collector",
            SessionMode::Evaluator => "evaluator",
        }
    }
}

fn next_session() -> String {
    static N: AtomicU64 = AtomicU64::new(1);
    format!("human-{}", N.fetch_add(1, Ordering::Relaxed))
}

pub struct Gateway {
    listener: TcpListener,
}

impl Gateway {
    pub fn bind<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        Ok(Gateway { listener: TcpListener::bind(addr)? })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Waits for one browser session on `/agent`. Requests for other paths
    /// get a 404 and are skipped.
    pub fn accept(&self, timeout: Duration) -> Result<HumanAgent, GatewayError> {
        let deadline = Instant::now() + timeout;
        self.listener.set_nonblocking(true)?;
        loop {
            let stream = match self.listener.accept() {
                Ok((s, _)) => s,
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(GatewayError::Timeout(timeout));
                    }
                    thread::sleep(Duration::from_millis(5));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            match upgrade(stream) {
                Ok(ws) => return Ok(HumanAgent::new(ws)),
                Err(GatewayError::Handshake(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }
}

// the callback signature is fixed by tungstenite
#[allow(clippy::result_large_err)]
fn upgrade(stream: TcpStream) -> Result<WebSocket<TcpStream>, GatewayError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    let check_path = |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
        if req.uri().path() == AGENT_PATH {
            Ok(resp)
        } else {
            let mut not_found = ErrorResponse::new(Some(format!("only {AGENT_PATH} is served")));
            *not_found.status_mut() = tungstenite::http::StatusCode::NOT_FOUND;
            Err(not_found)
        }
    };
    let ws = tungstenite::accept_hdr(stream, check_path).map_err(|e| GatewayError::Handshake(e.to_string()))?;
    ws.get_ref().set_read_timeout(None)?;
    Ok(ws)
}

/// Parses a client event. Anything but a well-formed `act` carrying a
/// valid message is an error the client is told about.
pub fn parse_client_event(text: &str) -> Result<Message, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("malformed JSON: {e}"))?;
    match value.get("type").and_then(Value::as_str) {
        Some("act") => {}
        Some(other) => return Err(format!("clients may only send act events, not {other:?}")),
        None => return Err("event has no type".into()),
    }
    let message = value.get("message").cloned().ok_or("act event has no message")?;
    let m = Message::from_json_value(message).map_err(|e| e.to_string())?;
    m.validate().map_err(|v| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "))?;
    Ok(m)
}

/// A browser participant seen as an agent. Its id is the session id, which
/// is also stamped on every reply.
pub struct HumanAgent {
    ws: WebSocket<TcpStream>,
    session: String,
    mode: SessionMode,
    timeout: Duration,
    open: bool,
    unsolicited: u64,
    malformed: u64,
}

impl HumanAgent {
    fn new(ws: WebSocket<TcpStream>) -> Self {
        HumanAgent {
            ws,
            session: next_session(),
            mode: SessionMode::Chat,
            timeout: DEFAULT_ACT_TIMEOUT,
            open: true,
            unsolicited: 0,
            malformed: 0,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_mode(mut self, mode: SessionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn session(&self) -> &str {
        &self.session
    }

    /// Acts the client sent while no act was requested. They are dropped.
    pub fn unsolicited_acts(&self) -> u64 {
        self.unsolicited
    }

    pub fn malformed_events(&self) -> u64 {
        self.malformed
    }

    fn event(&self, kind: &str) -> Value {
        json!({"type": kind, "session": self.session})
    }

    fn disconnected(&mut self) -> AgentError {
        self.open = false;
        AgentError::Disconnected(self.session.clone())
    }

    fn send(&mut self, event: Value) -> Result<(), AgentError> {
        if !self.open {
            return Err(AgentError::Disconnected(self.session.clone()));
        }
        match self.ws.send(WsMessage::text(event.to_string())) {
            Ok(()) => Ok(()),
            Err(_) => Err(self.disconnected()),
        }
    }

    fn send_error(&mut self, error: &str) -> Result<(), AgentError> {
        let mut e = self.event("error");
        e["error"] = Value::from(error);
        self.send(e)
    }

    /// Discards anything the client sent without being asked.
    fn drain(&mut self) -> Result<(), AgentError> {
        if self.ws.get_ref().set_nonblocking(true).is_err() {
            return Err(self.disconnected());
        }
        let mut rejected = Vec::new();
        let outcome = loop {
            match self.ws.read() {
                Ok(WsMessage::Text(t)) => {
                    match parse_client_event(t.as_str()) {
                        Ok(_) => {
                            self.unsolicited += 1;
                            rejected.push("act without act_request".to_string());
                        }
                        Err(e) => {
                            self.malformed += 1;
                            rejected.push(e);
                        }
                    }
                }
                Ok(WsMessage::Close(_)) => break Err(()),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if e.kind() == io::ErrorKind::WouldBlock => break Ok(()),
                Err(_) => break Err(()),
            }
        };
        if outcome.is_err() || self.ws.get_ref().set_nonblocking(false).is_err() {
            return Err(self.disconnected());
        }
        for r in rejected {
            self.send_error(&r)?;
        }
        Ok(())
    }
}

impl Agent for HumanAgent {
    fn id(&self) -> &str {
        &self.session
    }

    fn observe(&mut self, observation: &Message) -> Result<(), AgentError> {
        self.drain()?;
        let message = observation.to_json_value().map_err(|e| AgentError::failed(&self.session, e))?;
        let mut e = self.event("observe");
        e["message"] = message;
        self.send(e)
    }

    fn act(&mut self) -> Result<Message, AgentError> {
        self.drain()?;
        self.send(self.event("act_request"))?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(AgentError::Unavailable { agent: self.session.clone(), reason: format!("no reply within {:?}", self.timeout) });
            }
            if self.ws.get_ref().set_read_timeout(Some(left)).is_err() {
                return Err(self.disconnected());
            }
            match self.ws.read() {
                Ok(WsMessage::Text(t)) => match parse_client_event(t.as_str()) {
                    Ok(mut m) => {
                        m.id = Some(self.session.clone());
                        return Ok(m);
                    }
                    Err(e) => {
                        self.malformed += 1;
                        self.send_error(&e)?;
                    }
                },
                Ok(WsMessage::Close(_)) => return Err(self.disconnected()),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(_) => return Err(self.disconnected()),
            }
        }
    }

    fn shutdown(&mut self) {
        if self.open {
            let mut e = self.event("end");
            e["mode"] = Value::from(self.mode.as_str());
            let _ = self.send(e);
            let _ = self.ws.close(None);
            let _ = self.ws.flush();
            self.open = false;
        }
    }
}

impl Drop for HumanAgent {
    fn drop(&mut self) {
        self.shutdown();
    }
}
