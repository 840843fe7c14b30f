use crate::messages::Message;

use super::{Agent, AgentError, ConcurrentAgent};

pub const FALLBACK_REPLY: &str = "I don't know.";

/// First label, else first label candidate, else the fixed fallback.
pub fn repeat_label_reply(observation: &Message, id: &str) -> Message {
    let text = observation
        .labels
        .as_ref()
        .and_then(|l| l.first())
        .or_else(|| observation.label_candidates.as_ref().and_then(|c| c.first()))
        .cloned()
        .unwrap_or_else(|| FALLBACK_REPLY.to_string());
    Message::with_text(text).id(id)
}

/// Debugging agent that answers with the label it was shown.
#[derive(Debug, Clone)]
pub struct RepeatLabelAgent {
    id: String,
    last: Option<Message>,
}

impl RepeatLabelAgent {
    pub const ID: &'static str = "RepeatLabelAgent";

    pub fn new() -> Self {
        RepeatLabelAgent { id: Self::ID.to_string(), last: None }
    }
}

impl Default for RepeatLabelAgent {
    fn default() -> Self {
        Self::new()
    }
}

impl Agent for RepeatLabelAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn observe(&mut self, observation: &Message) -> Result<(), AgentError> {
        self.last = Some(observation.clone());
        Ok(())
    }

    fn act(&mut self) -> Result<Message, AgentError> {
        let obs = self.last.take().unwrap_or_default();
        Ok(repeat_label_reply(&obs, &self.id))
    }

    fn reset(&mut self) {
        self.last = None;
    }
}

impl ConcurrentAgent for RepeatLabelAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&self, observation: &Message) -> Result<Message, AgentError> {
        Ok(repeat_label_reply(observation, &self.id))
    }
}
