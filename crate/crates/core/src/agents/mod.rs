//! Agent and teacher contracts plus the built-in agents.

mod dialog_teacher;
mod multitask;
mod repeat_label;
mod shared;

use std::any::Any;
use std::fmt;

use thiserror::Error;

use crate::messages::{Message, Violation};
use crate::metrics::MetricsReport;

pub use dialog_teacher::DialogTeacher;
pub use multitask::{MixPolicy, MultiTaskTeacher};
pub use repeat_label::{repeat_label_reply, RepeatLabelAgent, FALLBACK_REPLY};
pub use shared::{ConcurrentAgent, SharedAgent};

#[derive(Debug, Error)]
pub enum AgentError {
    /// The agent did not answer in time.
    #[error("agent {agent} unavailable: {reason}")]
    Unavailable { agent: String, reason: String },
    /// The participant went away. Worlds treat this as an abandoned episode.
    #[error("agent {0} disconnected")]
    Disconnected(String),
    /// The participant asked to end the session.
    #[error("agent {0} ended the session")]
    EndOfSession(String),
    #[error("agent {agent} produced an invalid message: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidMessage { agent: String, violations: Vec<Violation> },
    #[error("protocol error with {agent}: {reason}")]
    Protocol { agent: String, reason: String },
    #[error("agent {agent} failed: {reason}")]
    Failed { agent: String, reason: String },
}

impl AgentError {
    pub fn failed(agent: &str, reason: impl fmt::Display) -> Self {
        AgentError::Failed { agent: agent.to_string(), reason: reason.to_string() }
    }
}

/// Opaque saved state used to roll an agent back after a failed step.
pub struct Checkpoint(Box<dyn Any + Send>);

impl Checkpoint {
    pub fn new<T: Any + Send>(state: T) -> Self {
        Checkpoint(Box::new(state))
    }

    pub fn downcast<T: Any>(self) -> Option<T> {
        self.0.downcast::<T>().ok().map(|b| *b)
    }
}

impl fmt::Debug for Checkpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Checkpoint(..)")
    }
}

/// Anything that can observe and act in a world.
pub trait Agent: Send {
    fn id(&self) -> &str;

    fn observe(&mut self, observation: &Message) -> Result<(), AgentError>;

    /// The reply should carry the agent's id; worlds stamp it when missing.
    fn act(&mut self) -> Result<Message, AgentError>;

    /// Clears per-episode state.
    fn reset(&mut self) {}

    /// Optional batched extension: observe every message in `observations`
    /// and reply to each, in order. `None` means unsupported.
    fn batch_act(&mut self, _observations: &[Message]) -> Option<Result<Vec<Message>, AgentError>> {
        None
    }

    fn checkpoint(&self) -> Option<Checkpoint> {
        None
    }

    fn restore(&mut self, _checkpoint: Checkpoint) {}

    fn shutdown(&mut self) {}
}

/// An agent that poses a task and scores the replies it observes.
pub trait Teacher: Agent {
    /// Accumulated metrics. Counters never decrease within an epoch unless
    /// an episode is abandoned.
    fn report(&self) -> MetricsReport;

    fn reset_metrics(&mut self);

    /// True once an ordered pass has emitted its final turn.
    fn epoch_done(&self) -> bool;

    fn num_episodes(&self) -> usize;

    fn episode_len(&self, index: usize) -> usize;

    fn num_examples(&self) -> usize {
        (0..self.num_episodes()).map(|i| self.episode_len(i)).sum()
    }

    /// Makes the next act start episode `index` (in this teacher's own
    /// episode order).
    fn seek_episode(&mut self, index: usize);

    /// Drops the metrics of the current episode, counts it as abandoned and
    /// moves on to the next one.
    fn abandon_episode(&mut self);

    /// Fresh teacher over the same data with its own cursor. For ordered
    /// modes it serves episodes `index, index + count, ...`; for random
    /// sampling it draws from an independent random stream.
    fn shard(&self, index: usize, count: usize) -> Box<dyn Teacher>;
}

/// Message a teacher emits when asked to act after its ordered epoch ended.
pub fn end_of_epoch(id: &str) -> Message {
    Message { id: Some(id.to_string()), episode_done: true, ..Default::default() }
}
