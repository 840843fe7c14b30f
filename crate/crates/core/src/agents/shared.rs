use std::sync::Arc;

use crate::messages::Message;

use super::{Agent, AgentError};

/// An agent shared by several worker threads. Each call passes its
/// observation explicitly, so interleaved calls from different workers
/// cannot mix up conversations. Implementations must be internally
/// synchronized if they keep state across calls.
pub trait ConcurrentAgent: Send + Sync {
    fn id(&self) -> &str;

    fn respond(&self, observation: &Message) -> Result<Message, AgentError>;
}

/// Per-worker handle that adapts a shared agent to [`Agent`].
pub struct SharedAgent {
    inner: Arc<dyn ConcurrentAgent>,
    id: String,
    last: Option<Message>,
}

impl SharedAgent {
    pub fn new(inner: Arc<dyn ConcurrentAgent>) -> Self {
        let id = inner.id().to_string();
        SharedAgent { inner, id, last: None }
    }

    pub fn inner(&self) -> &Arc<dyn ConcurrentAgent> {
        &self.inner
    }
}

impl Agent for SharedAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn observe(&mut self, observation: &Message) -> Result<(), AgentError> {
        self.last = Some(observation.clone());
        Ok(())
    }

    fn act(&mut self) -> Result<Message, AgentError> {
        let obs = self.last.take().unwrap_or_default();
        self.inner.respond(&obs)
    }

    fn reset(&mut self) {
        self.last = None;
    }

    fn batch_act(&mut self, observations: &[Message]) -> Option<Result<Vec<Message>, AgentError>> {
        Some(observations.iter().map(|o| self.inner.respond(o)).collect())
    }
}
