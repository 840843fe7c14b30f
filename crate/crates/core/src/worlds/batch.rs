use crate::agents::{Agent, Teacher};
use crate::messages::Message;
use crate::metrics::MetricsReport;

use super::{checked, display_messages, Snapshot, World, WorldError};

/// Lock-step replicas of a teacher sharing one learner.
///
/// Replica `i` of `n` serves `teacher.shard(i, n)`. Each step gathers one
/// message from every replica that still has data and hands the whole list
/// to the learner's `batch_act` when it has one, or falls back to one
/// observe/act pair per replica.
pub struct BatchWorld {
    teachers: Vec<Box<dyn Teacher>>,
    learner: Box<dyn Agent>,
    last: Vec<(Message, Message)>,
}

impl BatchWorld {
    pub fn new(teacher: &dyn Teacher, learner: Box<dyn Agent>, batch_size: usize) -> Result<Self, WorldError> {
        if batch_size == 0 {
            return Err(WorldError::Contract("batch size must be at least 1".into()));
        }
        let teachers = (0..batch_size).map(|i| teacher.shard(i, batch_size)).collect();
        Ok(BatchWorld { teachers, learner, last: Vec::new() })
    }

    pub fn batch_size(&self) -> usize {
        self.teachers.len()
    }

    pub fn learner_mut(&mut self) -> &mut dyn Agent {
        self.learner.as_mut()
    }

    pub fn into_learner(self) -> Box<dyn Agent> {
        self.learner
    }

    /// Teacher and learner messages of the last step, one pair per active
    /// replica.
    pub fn last_acts(&self) -> &[(Message, Message)] {
        &self.last
    }

    fn step(&mut self) -> Result<Vec<(Message, Message)>, WorldError> {
        let active: Vec<usize> = (0..self.teachers.len()).filter(|&i| !self.teachers[i].epoch_done()).collect();
        let mut observations = Vec::with_capacity(active.len());
        for &i in &active {
            let t = &mut self.teachers[i];
            let obs = t.act()?;
            observations.push(checked(t.id(), obs)?);
        }
        let learner_id = self.learner.id().to_string();
        let replies = match self.learner.batch_act(&observations) {
            Some(replies) => {
                let replies = replies?;
                if replies.len() != observations.len() {
                    return Err(WorldError::Contract(format!(
                        "batch_act returned {} replies for {} observations",
                        replies.len(),
                        observations.len()
                    )));
                }
                replies
            }
            None => {
                let mut replies = Vec::with_capacity(observations.len());
                for obs in &observations {
                    self.learner.observe(obs)?;
                    replies.push(self.learner.act()?);
                }
                replies
            }
        };
        let mut pairs = Vec::with_capacity(active.len());
        for ((&i, obs), reply) in active.iter().zip(observations).zip(replies) {
            let reply = checked(&learner_id, reply)?;
            self.teachers[i].observe(&reply)?;
            pairs.push((obs, reply));
        }
        Ok(pairs)
    }
}

impl World for BatchWorld {
    fn parley(&mut self) -> Result<(), WorldError> {
        let snapshot = Snapshot::take(
            self.teachers.iter().map(|t| -> &(dyn Agent + 'static) { t.as_ref() }).chain(std::iter::once(self.learner.as_ref())),
        );
        match self.step() {
            Ok(pairs) => {
                self.last = pairs;
                Ok(())
            }
            Err(e) => {
                let agents = self
                    .teachers
                    .iter_mut()
                    .map(|t| -> &mut (dyn Agent + 'static) { t.as_mut() })
                    .chain(std::iter::once(self.learner.as_mut()));
                snapshot.restore(agents);
                self.last.clear();
                Err(e)
            }
        }
    }

    fn display(&self) -> String {
        self.last
            .iter()
            .map(|(obs, reply)| display_messages(&[obs.clone(), reply.clone()]))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn episode_done(&self) -> bool {
        !self.last.is_empty() && self.last.iter().all(|(obs, _)| obs.episode_done)
    }

    fn epoch_done(&self) -> bool {
        self.teachers.iter().all(|t| t.epoch_done())
    }

    fn report(&self) -> MetricsReport {
        let mut out = MetricsReport::new();
        for t in &self.teachers {
            out.merge_from(&t.report());
        }
        out
    }

    fn shutdown(&mut self) {
        for t in &mut self.teachers {
            t.shutdown();
        }
        self.learner.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::agents::{AgentError, DialogTeacher, RepeatLabelAgent};
    use crate::episode::{DataMode, Episode, Turn};
    use crate::worlds::DialogPartnerWorld;

    fn teacher(n: usize) -> DialogTeacher {
        let eps = (0..n)
            .map(|i| {
                Episode::new(
                    "t",
                    vec![Turn::new(format!("q{i}")).with_labels([format!("a{i}")]), Turn::new("again").with_labels(["b"])],
                )
            })
            .collect();
        DialogTeacher::new("t", eps, DataMode::VALID, 0)
    }

    fn run(world: &mut dyn World) -> MetricsReport {
        while !world.epoch_done() {
            world.parley().unwrap();
        }
        world.report()
    }

    #[test]
    fn batch_of_one_matches_plain_world() {
        let t = teacher(3);
        let mut plain = DialogPartnerWorld::new(Box::new(t.clone()), Box::new(RepeatLabelAgent::new()));
        let mut batch = BatchWorld::new(&t, Box::new(RepeatLabelAgent::new()), 1).unwrap();
        while !plain.epoch_done() {
            plain.parley().unwrap();
            batch.parley().unwrap();
            assert_eq!(plain.last_acts(), [batch.last_acts()[0].0.clone(), batch.last_acts()[0].1.clone()]);
        }
        assert!(batch.epoch_done());
    }

    #[test]
    fn batched_report_equals_sequential() {
        let t = teacher(4);
        let mut plain = DialogPartnerWorld::new(Box::new(t.clone()), Box::new(RepeatLabelAgent::new()));
        let oracle = run(&mut plain);
        for b in [2, 4, 7] {
            let mut w = BatchWorld::new(&t, Box::new(RepeatLabelAgent::new()), b).unwrap();
            assert_eq!(run(&mut w), oracle, "batch size {b}");
        }
    }

    struct CountingActs(Arc<AtomicUsize>);

    impl Agent for CountingActs {
        fn id(&self) -> &str {
            "counter"
        }
        fn observe(&mut self, _: &Message) -> Result<(), AgentError> {
            Ok(())
        }
        fn act(&mut self) -> Result<Message, AgentError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(Message::with_text("x"))
        }
    }

    #[test]
    fn fallback_acts_once_per_replica() {
        let calls = Arc::new(AtomicUsize::new(0));
        let mut w = BatchWorld::new(&teacher(8), Box::new(CountingActs(calls.clone())), 8).unwrap();
        w.parley().unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 8);
    }

    struct ShortBatch;

    impl Agent for ShortBatch {
        fn id(&self) -> &str {
            "short"
        }
        fn observe(&mut self, _: &Message) -> Result<(), AgentError> {
            Ok(())
        }
        fn act(&mut self) -> Result<Message, AgentError> {
            Ok(Message::with_text("x"))
        }
        fn batch_act(&mut self, observations: &[Message]) -> Option<Result<Vec<Message>, AgentError>> {
            Some(Ok(vec![Message::with_text("x"); observations.len().saturating_sub(1)]))
        }
    }

    #[test]
    fn wrong_batch_length_is_a_contract_error() {
        let t = teacher(4);
        let mut w = BatchWorld::new(&t, Box::new(ShortBatch), 4).unwrap();
        assert!(matches!(w.parley(), Err(WorldError::Contract(_))));
        assert_eq!(w.report(), MetricsReport::new());
        assert!(BatchWorld::new(&t, Box::new(ShortBatch), 0).is_err());
    }
}
