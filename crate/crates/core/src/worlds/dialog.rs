use crate::agents::{Agent, AgentError, Teacher};
use crate::messages::Message;
use crate::metrics::MetricsReport;

use super::{checked, display_messages, Snapshot, TranscriptSink, World, WorldError};

/// Each agent acts once in order and every other agent observes the act.
/// Any failure rolls every agent back to its pre-step state.
fn run_step(agents: &mut [&mut (dyn Agent + 'static)]) -> Result<Vec<Message>, AgentError> {
    let snapshot = Snapshot::take(agents.iter().map(|a| &**a));
    let mut acts = Vec::with_capacity(agents.len());
    let result = (|| {
        for i in 0..agents.len() {
            let act = agents[i].act()?;
            let act = checked(agents[i].id(), act)?;
            for (j, other) in agents.iter_mut().enumerate() {
                if j != i {
                    other.observe(&act)?;
                }
            }
            acts.push(act);
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(acts),
        Err(e) => {
            snapshot.restore(agents.iter_mut().map(|a| &mut **a));
            Err(e)
        }
    }
}

/// The two-party world: the teacher speaks, the learner observes and
/// replies, the teacher observes the reply.
pub struct DialogPartnerWorld {
    teacher: Box<dyn Teacher>,
    learner: Box<dyn Agent>,
    last: Vec<Message>,
    sinks: Vec<Box<dyn TranscriptSink>>,
}

impl DialogPartnerWorld {
    pub fn new(teacher: Box<dyn Teacher>, learner: Box<dyn Agent>) -> Self {
        DialogPartnerWorld { teacher, learner, last: Vec::new(), sinks: Vec::new() }
    }

    pub fn with_sink(mut self, sink: Box<dyn TranscriptSink>) -> Self {
        self.sinks.push(sink);
        self
    }

    pub fn teacher(&self) -> &dyn Teacher {
        self.teacher.as_ref()
    }

    pub fn teacher_mut(&mut self) -> &mut dyn Teacher {
        self.teacher.as_mut()
    }

    pub fn learner_mut(&mut self) -> &mut dyn Agent {
        self.learner.as_mut()
    }

    /// Messages of the most recent step.
    pub fn last_acts(&self) -> &[Message] {
        &self.last
    }

    pub fn into_parts(self) -> (Box<dyn Teacher>, Box<dyn Agent>) {
        (self.teacher, self.learner)
    }
}

impl World for DialogPartnerWorld {
    /// A learner that disconnects mid-episode leaves the teacher at its
    /// pre-step state with the episode abandoned; the error is returned.
    fn parley(&mut self) -> Result<(), WorldError> {
        let teacher: &mut (dyn Agent + 'static) = self.teacher.as_mut();
        let mut agents: [&mut (dyn Agent + 'static); 2] = [teacher, self.learner.as_mut()];
        match run_step(&mut agents) {
            Ok(acts) => {
                for s in &mut self.sinks {
                    for m in &acts {
                        s.record(m);
                    }
                }
                self.last = acts;
                Ok(())
            }
            Err(e) => {
                if matches!(e, AgentError::Disconnected(_)) {
                    self.teacher.abandon_episode();
                }
                self.last.clear();
                Err(e.into())
            }
        }
    }

    fn display(&self) -> String {
        display_messages(&self.last)
    }

    fn episode_done(&self) -> bool {
        self.last.first().is_some_and(|m| m.episode_done)
    }

    fn epoch_done(&self) -> bool {
        self.teacher.epoch_done()
    }

    fn report(&self) -> MetricsReport {
        self.teacher.report()
    }

    fn shutdown(&mut self) {
        for s in &mut self.sinks {
            s.flush();
        }
        self.teacher.shutdown();
        self.learner.shutdown();
    }
}

/// Any number of agents taking turns in a fixed order.
pub struct MultiAgentDialogWorld {
    agents: Vec<Box<dyn Agent>>,
    last: Vec<Message>,
    sinks: Vec<Box<dyn TranscriptSink>>,
}

impl MultiAgentDialogWorld {
    /// Needs at least two agents.
    pub fn new(agents: Vec<Box<dyn Agent>>) -> Result<Self, WorldError> {
        if agents.len() < 2 {
            return Err(WorldError::Contract(format!("a dialog world needs at least 2 agents, got {}", agents.len())));
        }
        Ok(MultiAgentDialogWorld { agents, last: Vec::new(), sinks: Vec::new() })
    }

    pub fn with_sink(mut self, sink: Box<dyn TranscriptSink>) -> Self {
        self.sinks.push(sink);
        self
    }

    pub fn agents_mut(&mut self) -> &mut [Box<dyn Agent>] {
        &mut self.agents
    }

    pub fn last_acts(&self) -> &[Message] {
        &self.last
    }
}

impl World for MultiAgentDialogWorld {
    fn parley(&mut self) -> Result<(), WorldError> {
        let mut agents: Vec<&mut (dyn Agent + 'static)> = self.agents.iter_mut().map(|a| a.as_mut()).collect();
        match run_step(&mut agents) {
            Ok(acts) => {
                for s in &mut self.sinks {
                    for m in &acts {
                        s.record(m);
                    }
                }
                self.last = acts;
                Ok(())
            }
            Err(e) => {
                self.last.clear();
                Err(e.into())
            }
        }
    }

    fn display(&self) -> String {
        display_messages(&self.last)
    }

    fn episode_done(&self) -> bool {
        self.last.iter().any(|m| m.episode_done)
    }

    fn epoch_done(&self) -> bool {
        false
    }

    fn report(&self) -> MetricsReport {
        MetricsReport::new()
    }

    fn shutdown(&mut self) {
        for s in &mut self.sinks {
            s.flush();
        }
        for a in &mut self.agents {
            a.shutdown();
        }
    }
}
