use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::messages::Message;
use crate::metrics::MetricsReport;

use super::{end_of_epoch, Agent, AgentError, Checkpoint, Teacher};

/// How a random-mode multitask teacher picks the task for each episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixPolicy {
    /// Every task equally likely, regardless of size.
    #[default]
    Uniform,
    /// Proportional to each task's episode count.
    BySize,
}

impl std::str::FromStr for MixPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(MixPolicy::Uniform),
            "size" | "by-size" => Ok(MixPolicy::BySize),
            _ => Err(format!("unknown mix policy {s:?} (expected uniform or size)")),
        }
    }
}

/// Presents several teachers as one.
///
/// In random mode a task is drawn per episode and the whole episode comes
/// from it. In ordered mode the sub-teachers are exhausted one after the
/// other. Reports keep one section per sub-teacher.
pub struct MultiTaskTeacher {
    id: String,
    subs: Vec<Box<dyn Teacher>>,
    ordered: bool,
    policy: MixPolicy,
    seed: u64,
    stream: u64,
    state: MixState,
}

#[derive(Clone)]
struct MixState {
    rng: ChaCha8Rng,
    /// Sub-teacher in the middle of an episode (random mode) or being
    /// exhausted (ordered mode).
    active: Option<usize>,
    cursor: usize,
    last_acted: Option<usize>,
}

impl MixState {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        MixState { rng, active: None, cursor: 0, last_acted: None }
    }
}

impl MultiTaskTeacher {
    /// `ordered` must match the data mode of the sub-teachers.
    pub fn new(id: impl Into<String>, subs: Vec<Box<dyn Teacher>>, ordered: bool, policy: MixPolicy, seed: u64) -> Self {
        MultiTaskTeacher { id: id.into(), subs, ordered, policy, seed, stream: 0, state: MixState::new(seed, 0) }
    }

    pub fn tasks(&self) -> impl Iterator<Item = &dyn Teacher> {
        self.subs.iter().map(|t| t.as_ref())
    }

    fn pick(&mut self) -> Option<usize> {
        let weights: Vec<u64> = self
            .subs
            .iter()
            .map(|t| match (t.num_episodes(), self.policy) {
                (0, _) => 0,
                (_, MixPolicy::Uniform) => 1,
                (n, MixPolicy::BySize) => n as u64,
            })
            .collect();
        let total: u64 = weights.iter().sum();
        if total == 0 {
            return None;
        }
        let mut r = self.state.rng.random_range(0..total);
        for (i, w) in weights.iter().enumerate() {
            if r < *w {
                return Some(i);
            }
            r -= w;
        }
        None
    }

    fn locate(&self, mut index: usize) -> Option<(usize, usize)> {
        for (i, t) in self.subs.iter().enumerate() {
            let n = t.num_episodes();
            if index < n {
                return Some((i, index));
            }
            index -= n;
        }
        None
    }
}

impl Agent for MultiTaskTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn observe(&mut self, observation: &Message) -> Result<(), AgentError> {
        match self.state.last_acted {
            Some(i) => self.subs[i].observe(observation),
            None => Ok(()),
        }
    }

    fn act(&mut self) -> Result<Message, AgentError> {
        let i = if self.ordered {
            while self.state.cursor < self.subs.len() && self.subs[self.state.cursor].epoch_done() {
                self.state.cursor += 1;
            }
            if self.state.cursor == self.subs.len() {
                self.state.last_acted = None;
                return Ok(end_of_epoch(&self.id));
            }
            self.state.cursor
        } else {
            match self.state.active {
                Some(i) => i,
                None => match self.pick() {
                    Some(i) => i,
                    None => {
                        self.state.last_acted = None;
                        return Ok(end_of_epoch(&self.id));
                    }
                },
            }
        };
        let msg = self.subs[i].act()?;
        self.state.last_acted = Some(i);
        self.state.active = (!msg.episode_done).then_some(i);
        Ok(msg)
    }

    fn reset(&mut self) {
        for t in &mut self.subs {
            t.reset();
        }
        self.state = MixState::new(self.seed, self.stream);
    }

    fn checkpoint(&self) -> Option<Checkpoint> {
        let subs: Vec<Option<Checkpoint>> = self.subs.iter().map(|t| t.checkpoint()).collect();
        Some(Checkpoint::new((self.state.clone(), subs)))
    }

    fn restore(&mut self, checkpoint: Checkpoint) {
        if let Some((state, subs)) = checkpoint.downcast::<(MixState, Vec<Option<Checkpoint>>)>() {
            self.state = state;
            for (t, cp) in self.subs.iter_mut().zip(subs) {
                if let Some(cp) = cp {
                    t.restore(cp);
                }
            }
        }
    }

    fn shutdown(&mut self) {
        for t in &mut self.subs {
            t.shutdown();
        }
    }
}

impl Teacher for MultiTaskTeacher {
    /// Totals over every sub-teacher, with a section per sub-teacher. A
    /// single sub-teacher reports on its own.
    fn report(&self) -> MetricsReport {
        if self.subs.len() == 1 {
            return self.subs[0].report();
        }
        let mut out = MetricsReport::new();
        for t in &self.subs {
            let r = t.report();
            out.merge_from(&r.totals());
            out.per_task.insert(t.id().to_string(), r);
        }
        out
    }

    fn reset_metrics(&mut self) {
        for t in &mut self.subs {
            t.reset_metrics();
        }
    }

    fn epoch_done(&self) -> bool {
        self.ordered && self.subs.iter().all(|t| t.epoch_done())
    }

    fn num_episodes(&self) -> usize {
        self.subs.iter().map(|t| t.num_episodes()).sum()
    }

    fn episode_len(&self, index: usize) -> usize {
        self.locate(index).map(|(i, local)| self.subs[i].episode_len(local)).unwrap_or(0)
    }

    /// Episodes are numbered across sub-teachers in task order.
    fn seek_episode(&mut self, index: usize) {
        if let Some((i, local)) = self.locate(index) {
            self.subs[i].seek_episode(local);
            self.state.active = Some(i);
            self.state.cursor = i;
            self.state.last_acted = None;
        }
    }

    fn abandon_episode(&mut self) {
        let target = if self.ordered {
            (self.state.cursor < self.subs.len()).then_some(self.state.cursor)
        } else {
            self.state.active.or(self.state.last_acted)
        };
        if let Some(i) = target {
            self.subs[i].abandon_episode();
        }
        self.state.active = None;
        self.state.last_acted = None;
    }

    fn shard(&self, index: usize, count: usize) -> Box<dyn Teacher> {
        let subs = self.subs.iter().map(|t| t.shard(index, count)).collect();
        let stream = if count <= 1 { self.stream } else { index as u64 };
        Box::new(MultiTaskTeacher {
            id: self.id.clone(),
            subs,
            ordered: self.ordered,
            policy: self.policy,
            seed: self.seed,
            stream,
            state: MixState::new(self.seed, stream),
        })
    }
}
