//! Peer side of the TCP bridge: run a native agent for a remote world, or
//! watch a world as an observer.

use std::net::{TcpStream, ToSocketAddrs};

use parlance_core::agents::Agent;
use parlance_core::Message;

use crate::control::{Control, Role, PROTOCOL_VERSION};
use crate::frame::{read_record, write_record, FrameError, Record, DEFAULT_MAX_PAYLOAD};
use crate::remote::BridgeError;

fn connect<A: ToSocketAddrs>(addr: A, role: Role, agent_id: &str) -> Result<(TcpStream, String), BridgeError> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let hello = Control::Hello { version: PROTOCOL_VERSION, role, agent_id: agent_id.to_string() };
    write_record(&mut stream, &Record::Control(hello))?;
    match read_record(&mut stream, DEFAULT_MAX_PAYLOAD)? {
        Record::Control(Control::Welcome { session, .. }) => Ok((stream, session)),
        Record::Control(Control::Error { message }) => Err(BridgeError::Handshake(message)),
        other => Err(BridgeError::Handshake(format!("expected welcome, got {other:?}"))),
    }
}

/// How a peer session ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerSummary {
    pub session: String,
    pub observed: usize,
    pub acted: usize,
}

/// Connects `agent` to the world listening at `addr` and serves it until
/// the world shuts the session down or the connection closes.
pub fn serve_peer<A: ToSocketAddrs>(addr: A, agent: &mut dyn Agent) -> Result<PeerSummary, BridgeError> {
    let (mut stream, session) = connect(addr, Role::Agent, agent.id())?;
    let mut summary = PeerSummary { session, observed: 0, acted: 0 };
    loop {
        match read_record(&mut stream, DEFAULT_MAX_PAYLOAD) {
            Ok(Record::Message(m)) => {
                summary.observed += 1;
                if let Err(e) = agent.observe(&m) {
                    let _ = write_record(&mut stream, &Record::Control(Control::Error { message: e.to_string() }));
                    return Err(BridgeError::Handshake(e.to_string()));
                }
            }
            Ok(Record::Control(Control::ActRequest)) => {
                let reply = match agent.act() {
                    Ok(m) => Record::Message(m),
                    Err(e) => Record::Control(Control::Error { message: e.to_string() }),
                };
                write_record(&mut stream, &reply)?;
                summary.acted += 1;
            }
            Ok(Record::Control(Control::Shutdown)) | Err(FrameError::Closed) => break,
            Ok(Record::Control(other)) => {
                return Err(BridgeError::Handshake(format!("unexpected control record {other:?}")));
            }
            Err(e) => return Err(e.into()),
        }
    }
    agent.shutdown();
    Ok(summary)
}

/// A read-only view of a world's messages.
pub struct ObserverClient {
    stream: TcpStream,
    session: String,
}

impl ObserverClient {
    pub fn connect<A: ToSocketAddrs>(addr: A, id: &str) -> Result<Self, BridgeError> {
        let (stream, session) = connect(addr, Role::Observer, id)?;
        Ok(ObserverClient { stream, session })
    }

    pub fn session(&self) -> &str {
        &self.session
    }

    /// The next message, or `None` once the world is done.
    pub fn next_message(&mut self) -> Result<Option<Message>, BridgeError> {
        match read_record(&mut self.stream, DEFAULT_MAX_PAYLOAD) {
            Ok(Record::Message(m)) => Ok(Some(m)),
            Ok(Record::Control(_)) | Err(FrameError::Closed) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}
