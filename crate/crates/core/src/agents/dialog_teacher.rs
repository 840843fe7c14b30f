use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::episode::{DataMode, Episode};
use crate::messages::Message;
use crate::metrics::{MetricsReport, DEFAULT_HITS_AT};

use super::{end_of_epoch, Agent, AgentError, Checkpoint, Teacher};

/// Teacher over a fixed list of episodes.
///
/// Ordered modes walk the episodes and their turns in dataset order and
/// finish the epoch after the last turn. Random training mode samples whole
/// episodes uniformly with replacement and never finishes. In test mode the
/// labels are kept for scoring but left out of the emitted messages.
#[derive(Clone)]
pub struct DialogTeacher {
    id: String,
    data: Arc<[Episode]>,
    order: Arc<[usize]>,
    mode: DataMode,
    seed: u64,
    stream: u64,
    hits_at: Arc<[usize]>,
    state: Cursor,
}

#[derive(Clone)]
struct Cursor {
    rng: ChaCha8Rng,
    current: Option<usize>,
    turn: usize,
    next_ordered: usize,
    epoch_done: bool,
    pending: Option<Pending>,
    committed: MetricsReport,
    in_episode: MetricsReport,
}

#[derive(Clone)]
struct Pending {
    labels: Vec<String>,
    last_turn: bool,
}

impl Cursor {
    fn new(seed: u64, stream: u64, episodes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Cursor {
            rng,
            current: None,
            turn: 0,
            next_ordered: 0,
            epoch_done: episodes == 0,
            pending: None,
            committed: MetricsReport::new(),
            in_episode: MetricsReport::new(),
        }
    }

    fn commit(&mut self) {
        let done = std::mem::take(&mut self.in_episode);
        self.committed.merge_from(&done);
    }
}

impl DialogTeacher {
    pub fn new(id: impl Into<String>, episodes: Vec<Episode>, mode: DataMode, seed: u64) -> Self {
        let order: Arc<[usize]> = (0..episodes.len()).collect();
        let n = order.len();
        DialogTeacher {
            id: id.into(),
            data: episodes.into(),
            order,
            mode,
            seed,
            stream: 0,
            hits_at: DEFAULT_HITS_AT.into(),
            state: Cursor::new(seed, 0, n),
        }
    }

    pub fn with_hits_at(mut self, ks: &[usize]) -> Self {
        self.hits_at = ks.into();
        self
    }

    pub fn mode(&self) -> DataMode {
        self.mode
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.order.iter().map(|&i| &self.data[i])
    }

    fn finish_episode(&mut self, local: usize) {
        self.state.current = None;
        self.state.turn = 0;
        if self.mode.ordered() {
            self.state.next_ordered = local + 1;
            if self.state.next_ordered >= self.order.len() {
                self.state.epoch_done = true;
            }
        }
    }

    fn turn_message(&self, local: usize, turn: usize) -> Message {
        let episode = &self.data[self.order[local]];
        let t = &episode.turns[turn];
        let mut m = Message::with_text(t.text.clone()).id(self.id.clone());
        if !t.labels.is_empty() && !self.mode.withholds_labels() {
            m.labels = Some(t.labels.clone());
        }
        m.label_candidates = t.label_candidates.clone();
        m.reward = t.reward;
        m.episode_done = turn + 1 == episode.turns.len();
        m
    }
}

impl Agent for DialogTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn observe(&mut self, observation: &Message) -> Result<(), AgentError> {
        if let Some(p) = self.state.pending.take() {
            self.state.in_episode.record(observation, &p.labels, &self.hits_at);
            if p.last_turn {
                self.state.commit();
            }
        }
        Ok(())
    }

    fn act(&mut self) -> Result<Message, AgentError> {
        let n = self.order.len();
        if n == 0 || (self.mode.ordered() && self.state.epoch_done) {
            self.state.pending = None;
            return Ok(end_of_epoch(&self.id));
        }
        let local = match self.state.current {
            Some(ep) => ep,
            None => {
                let ep = if self.mode.ordered() { self.state.next_ordered } else { self.state.rng.random_range(0..n) };
                self.state.commit();
                self.state.current = Some(ep);
                self.state.turn = 0;
                ep
            }
        };
        let turn = self.state.turn;
        let msg = self.turn_message(local, turn);
        let labels = &self.data[self.order[local]].turns[turn].labels;
        self.state.pending =
            (!labels.is_empty()).then(|| Pending { labels: labels.clone(), last_turn: msg.episode_done });
        if msg.episode_done {
            self.finish_episode(local);
        } else {
            self.state.turn += 1;
        }
        Ok(msg)
    }

    /// Rewinds to the start of the epoch. Metrics are kept.
    fn reset(&mut self) {
        let committed = self.report();
        self.state = Cursor::new(self.seed, self.stream, self.order.len());
        self.state.committed = committed;
    }

    fn checkpoint(&self) -> Option<Checkpoint> {
        Some(Checkpoint::new(self.state.clone()))
    }

    fn restore(&mut self, checkpoint: Checkpoint) {
        if let Some(state) = checkpoint.downcast::<Cursor>() {
            self.state = state;
        }
    }
}

impl Teacher for DialogTeacher {
    fn report(&self) -> MetricsReport {
        self.state.committed.merge(&self.state.in_episode)
    }

    fn reset_metrics(&mut self) {
        self.state.committed = MetricsReport::new();
        self.state.in_episode = MetricsReport::new();
    }

    fn epoch_done(&self) -> bool {
        self.mode.ordered() && self.state.epoch_done
    }

    fn num_episodes(&self) -> usize {
        self.order.len()
    }

    fn episode_len(&self, index: usize) -> usize {
        self.data[self.order[index]].len()
    }

    fn seek_episode(&mut self, index: usize) {
        if index >= self.order.len() {
            return;
        }
        self.state.commit();
        self.state.pending = None;
        self.state.current = Some(index);
        self.state.turn = 0;
        self.state.epoch_done = false;
    }

    fn abandon_episode(&mut self) {
        self.state.pending = None;
        self.state.in_episode = MetricsReport::new();
        self.state.committed.abandoned_episodes += 1;
        match self.state.current {
            Some(local) => self.finish_episode(local),
            None if self.mode.ordered() && !self.state.epoch_done => {
                let next = self.state.next_ordered;
                self.finish_episode(next);
            }
            None => {}
        }
    }

    fn shard(&self, index: usize, count: usize) -> Box<dyn Teacher> {
        let count = count.max(1);
        let order: Arc<[usize]> = if self.mode.ordered() {
            self.order.iter().copied().skip(index).step_by(count).collect()
        } else {
            self.order.clone()
        };
        let stream = if count == 1 { self.stream } else { index as u64 };
        Box::new(DialogTeacher {
            id: self.id.clone(),
            data: self.data.clone(),
            state: Cursor::new(self.seed, stream, order.len()),
            order,
            mode: self.mode,
            seed: self.seed,
            stream,
            hits_at: self.hits_at.clone(),
        })
    }
}
