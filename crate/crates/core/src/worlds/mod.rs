//! Worlds hold agents and advance time one `parley` at a time.

mod batch;
mod dialog;
mod hogwild;

use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::agents::{Agent, AgentError, Checkpoint};
use crate::messages::Message;
use crate::metrics::MetricsReport;

pub use batch::BatchWorld;
pub use dialog::{DialogPartnerWorld, MultiAgentDialogWorld};
pub use hogwild::{HogwildConfig, HogwildWorld};

/// Printed after the last message of an episode.
pub const EPISODE_SEPARATOR: &str = "- - - - - - - - - - - - - - - - - - - - -";

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("hogwild worker {worker}: {source}")]
    Worker {
        worker: usize,
        #[source]
        source: Box<WorldError>,
    },
}

impl WorldError {
    /// The agent error behind this failure, if any.
    pub fn agent_error(&self) -> Option<&AgentError> {
        match self {
            WorldError::Agent(e) => Some(e),
            WorldError::Worker { source, .. } => source.agent_error(),
            WorldError::Contract(_) => None,
        }
    }
}

pub trait World: Send {
    /// One time step.
    fn parley(&mut self) -> Result<(), WorldError>;

    /// Rendering of the most recent step.
    fn display(&self) -> String;

    fn episode_done(&self) -> bool;

    fn epoch_done(&self) -> bool;

    fn report(&self) -> MetricsReport;

    fn shutdown(&mut self);
}

/// Receives every message a world emits, after the step that produced it
/// has completed.
pub trait TranscriptSink: Send {
    fn record(&mut self, message: &Message);

    fn flush(&mut self) {}
}

/// In-memory transcript that can be read while the world still owns it.
#[derive(Debug, Clone, Default)]
pub struct SharedTranscript(Arc<Mutex<Vec<Message>>>);

impl SharedTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn messages(&self) -> Vec<Message> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl TranscriptSink for SharedTranscript {
    fn record(&mut self, message: &Message) {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).push(message.clone());
    }
}

/// Renders one step: `[id]: text` per message with candidates and reward,
/// every agent after the first indented by three spaces, and a separator
/// plus blank line once the episode is over.
pub fn display_messages(messages: &[Message]) -> String {
    let mut lines: Vec<String> = Vec::new();
    for (i, m) in messages.iter().enumerate() {
        let pad = if i == 0 { "" } else { "   " };
        if let Some(r) = m.reward {
            lines.push(format!("{pad}[reward: {r}]"));
        }
        if let Some(text) = &m.text {
            lines.push(format!("{pad}[{}]: {text}", m.id.as_deref().unwrap_or("")));
        }
        if let Some(img) = &m.image {
            lines.push(format!("{pad}[image: {}]", img.media_type));
        }
        if let Some(c) = m.label_candidates.as_ref().filter(|c| !c.is_empty()) {
            lines.push(format!("{pad}[cands: {}]", c.join("|")));
        }
    }
    if messages.iter().any(|m| m.episode_done) {
        lines.push(EPISODE_SEPARATOR.to_string());
        lines.push(String::new());
    }
    lines.join("\n")
}

/// Stamps the agent's id when missing and rejects invalid messages.
pub fn checked(agent: &str, mut message: Message) -> Result<Message, AgentError> {
    if message.id.is_none() {
        message.id = Some(agent.to_string());
    }
    message.validate().map_err(|violations| AgentError::InvalidMessage { agent: agent.to_string(), violations })?;
    Ok(message)
}

/// Saved state of a group of agents for rolling back a failed step.
pub(crate) struct Snapshot(Vec<Option<Checkpoint>>);

impl Snapshot {
    pub(crate) fn take<'a, 'b: 'a>(agents: impl IntoIterator<Item = &'a (dyn Agent + 'b)>) -> Self {
        Snapshot(agents.into_iter().map(|a| a.checkpoint()).collect())
    }

    pub(crate) fn restore<'a, 'b: 'a>(self, agents: impl IntoIterator<Item = &'a mut (dyn Agent + 'b)>) {
        for (a, cp) in agents.into_iter().zip(self.0) {
            if let Some(cp) = cp {
                a.restore(cp);
            }
        }
    }
}
