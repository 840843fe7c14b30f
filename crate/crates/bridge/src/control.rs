//! Control records and the per-connection session state machine.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Observes and acts.
    Agent,
    /// Receives every message of the world and never acts.
    Observer,
}

/// Records tagged with the reserved `__control__` key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "__control__", rename_all = "snake_case")]
pub enum Control {
    /// First record from the connecting peer.
    Hello { version: u32, role: Role, agent_id: String },
    /// The world's answer to a compatible hello.
    Welcome { version: u32, session: String },
    /// The world wants the peer's next act.
    ActRequest,
    Shutdown,
    Error { message: String },
}

impl Control {
    pub fn to_canonical_json(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("control records always serialize");
        serde_json::to_vec(&value).expect("json values always serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Connecting,
    Ready,
    AwaitingAct,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEvent {
    Handshake,
    Observe,
    ActRequest,
    Reply,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{event:?} is not allowed while {from:?}")]
pub struct IllegalTransition {
    pub from: SessionState,
    pub event: SessionEvent,
}

impl SessionState {
    /// Every (state, event) pair has an outcome: the next state or an
    /// illegal-transition error. Closing is allowed from anywhere.
    pub fn next(self, event: SessionEvent) -> Result<SessionState, IllegalTransition> {
        use SessionEvent as E;
        use SessionState as S;
        match (self, event) {
            (_, E::Close) => Ok(S::Closed),
            (S::Connecting, E::Handshake) => Ok(S::Ready),
            (S::Ready, E::Observe) => Ok(S::Ready),
            (S::Ready, E::ActRequest) => Ok(S::AwaitingAct),
            (S::AwaitingAct, E::Reply) => Ok(S::Ready),
            (from, event) => Err(IllegalTransition { from, event }),
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
