//! World side of the TCP bridge. The world listens; peers dial in, say
//! hello, and then serve observe/act requests as they arrive.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use parlance_core::agents::{Agent, AgentError};
use parlance_core::worlds::TranscriptSink;
use parlance_core::Message;
use thiserror::Error;

use crate::control::{Control, Role, SessionEvent, SessionState, PROTOCOL_VERSION};
use crate::frame::{read_record, write_record, FrameError, Record, DEFAULT_MAX_PAYLOAD};

pub const DEFAULT_ACT_TIMEOUT: Duration = Duration::from_secs(60);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("no peer connected within {0:?}")]
    Timeout(Duration),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("protocol version {theirs} is not supported (expected {ours})")]
    VersionMismatch { ours: u32, theirs: u32 },
    #[error("peer connected as {got:?}, expected {expected:?}")]
    WrongRole { expected: Role, got: Role },
}

fn next_session() -> String {
    static N: AtomicU64 = AtomicU64::new(1);
    format!("session-{}", N.fetch_add(1, Ordering::Relaxed))
}

/// A peer that completed the handshake.
#[derive(Debug)]
pub struct Connection {
    stream: TcpStream,
    pub role: Role,
    pub agent_id: String,
    pub session: String,
}

pub struct RemoteListener {
    listener: TcpListener,
}

impl RemoteListener {
    pub fn bind<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        Ok(RemoteListener { listener: TcpListener::bind(addr)? })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Waits up to `timeout` for one peer and performs the handshake.
    pub fn accept(&self, timeout: Duration) -> Result<Connection, BridgeError> {
        let deadline = Instant::now() + timeout;
        self.listener.set_nonblocking(true)?;
        let stream = loop {
            match self.listener.accept() {
                Ok((s, _)) => break s,
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(BridgeError::Timeout(timeout));
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        };
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        handshake(stream)
    }

    pub fn accept_agent(&self, timeout: Duration) -> Result<RemoteAgent, BridgeError> {
        RemoteAgent::new(self.accept(timeout)?)
    }
}

fn handshake(mut stream: TcpStream) -> Result<Connection, BridgeError> {
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    let (version, role, agent_id) = match read_record(&mut stream, DEFAULT_MAX_PAYLOAD)? {
        Record::Control(Control::Hello { version, role, agent_id }) => (version, role, agent_id),
        other => return Err(BridgeError::Handshake(format!("expected hello, got {other:?}"))),
    };
    if version != PROTOCOL_VERSION {
        let message = format!("unsupported protocol version {version}");
        let _ = write_record(&mut stream, &Record::Control(Control::Error { message }));
        return Err(BridgeError::VersionMismatch { ours: PROTOCOL_VERSION, theirs: version });
    }
    let session = next_session();
    write_record(&mut stream, &Record::Control(Control::Welcome { version: PROTOCOL_VERSION, session: session.clone() }))?;
    stream.set_read_timeout(None)?;
    Ok(Connection { stream, role, agent_id, session })
}

/// An agent living in another process.
pub struct RemoteAgent {
    conn: Connection,
    state: SessionState,
    timeout: Duration,
}

impl RemoteAgent {
    pub fn new(conn: Connection) -> Result<Self, BridgeError> {
        if conn.role != Role::Agent {
            return Err(BridgeError::WrongRole { expected: Role::Agent, got: conn.role });
        }
        Ok(RemoteAgent { conn, state: SessionState::Ready, timeout: DEFAULT_ACT_TIMEOUT })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn session(&self) -> &str {
        &self.conn.session
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    fn transition(&mut self, event: SessionEvent) -> Result<(), AgentError> {
        self.state = self.state.next(event).map_err(|e| {
            let reason = match self.state {
                SessionState::Closed => return AgentError::Disconnected(self.conn.agent_id.clone()),
                _ => e.to_string(),
            };
            AgentError::Protocol { agent: self.conn.agent_id.clone(), reason }
        })?;
        Ok(())
    }

    fn close(&mut self) {
        self.state = SessionState::Closed;
        let _ = self.conn.stream.shutdown(std::net::Shutdown::Both);
    }

    fn send(&mut self, record: &Record) -> Result<(), AgentError> {
        if let Err(e) = write_record(&mut self.conn.stream, record) {
            self.close();
            return Err(match e {
                FrameError::Message(m) => AgentError::failed(&self.conn.agent_id, m),
                _ => AgentError::Disconnected(self.conn.agent_id.clone()),
            });
        }
        Ok(())
    }
}

impl Agent for RemoteAgent {
    fn id(&self) -> &str {
        &self.conn.agent_id
    }

    fn observe(&mut self, observation: &Message) -> Result<(), AgentError> {
        self.transition(SessionEvent::Observe)?;
        self.send(&Record::Message(observation.clone()))
    }

    /// Asks the peer to act and waits for its reply. A timeout or a broken
    /// connection closes the session.
    fn act(&mut self) -> Result<Message, AgentError> {
        self.transition(SessionEvent::ActRequest)?;
        self.send(&Record::Control(Control::ActRequest))?;
        let agent = self.conn.agent_id.clone();
        if let Err(e) = self.conn.stream.set_read_timeout(Some(self.timeout)) {
            self.close();
            return Err(AgentError::failed(&agent, e));
        }
        let record = read_record(&mut self.conn.stream, DEFAULT_MAX_PAYLOAD);
        match record {
            Ok(Record::Message(mut m)) => {
                self.transition(SessionEvent::Reply)?;
                if m.id.is_none() {
                    m.id = Some(agent);
                }
                Ok(m)
            }
            Ok(Record::Control(Control::Error { message })) => {
                self.close();
                Err(AgentError::Protocol { agent, reason: message })
            }
            Ok(Record::Control(Control::Shutdown)) => {
                self.close();
                Err(AgentError::EndOfSession(agent))
            }
            Ok(Record::Control(other)) => {
                self.close();
                Err(AgentError::Protocol { agent, reason: format!("unexpected {other:?} while awaiting an act") })
            }
            Err(e) if e.is_timeout() => {
                self.close();
                Err(AgentError::Unavailable { agent, reason: format!("no reply within {:?}", self.timeout) })
            }
            Err(FrameError::Closed | FrameError::Io(_)) => {
                self.close();
                Err(AgentError::Disconnected(agent))
            }
            Err(e) => {
                self.close();
                Err(AgentError::Protocol { agent, reason: e.to_string() })
            }
        }
    }

    fn shutdown(&mut self) {
        if self.state != SessionState::Closed {
            let _ = write_record(&mut self.conn.stream, &Record::Control(Control::Shutdown));
            self.close();
        }
    }
}

impl Drop for RemoteAgent {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Forwards every message of a world to a peer connected as observer.
/// Once the peer goes away further messages are dropped.
pub struct RemoteObserver {
    conn: Connection,
    open: bool,
}

impl RemoteObserver {
    pub fn new(conn: Connection) -> Result<Self, BridgeError> {
        if conn.role != Role::Observer {
            return Err(BridgeError::WrongRole { expected: Role::Observer, got: conn.role });
        }
        Ok(RemoteObserver { conn, open: true })
    }

    pub fn is_open(&self) -> bool {
        self.open
    }
}

impl TranscriptSink for RemoteObserver {
    fn record(&mut self, message: &Message) {
        if self.open && write_record(&mut self.conn.stream, &Record::Message(message.clone())).is_err() {
            self.open = false;
        }
    }

    fn flush(&mut self) {
        if self.open {
            let _ = write_record(&mut self.conn.stream, &Record::Control(Control::Shutdown));
            self.open = false;
        }
    }
}
