use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::agents::{ConcurrentAgent, Teacher};
use crate::metrics::MetricsReport;

use super::{checked, WorldError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HogwildConfig {
    pub workers: usize,
    /// Number of teacher turns to process across all workers.
    pub budget: u64,
}

/// Worker threads sharing one agent.
///
/// Workers claim episodes from a shared counter: claim `k` is episode
/// `k mod n` of the teacher, and its turns occupy global positions
/// `prefix(k) .. prefix(k) + len`. Only turns whose position is below the
/// budget are played, so the total is exactly the budget no matter how
/// claims interleave. With a budget of one pass, every episode is served
/// exactly once.
pub struct HogwildWorld {
    teacher: Box<dyn Teacher>,
    agent: Arc<dyn ConcurrentAgent>,
    config: HogwildConfig,
}

struct Layout {
    lens: Vec<u64>,
    starts: Vec<u64>,
    total: u64,
}

impl Layout {
    fn new(teacher: &dyn Teacher) -> Self {
        let lens: Vec<u64> = (0..teacher.num_episodes()).map(|i| teacher.episode_len(i) as u64).collect();
        let mut starts = Vec::with_capacity(lens.len());
        let mut total = 0;
        for l in &lens {
            starts.push(total);
            total += l;
        }
        Layout { lens, starts, total }
    }

    fn prefix(&self, claim: u64) -> u64 {
        let n = self.lens.len() as u64;
        (claim / n) * self.total + self.starts[(claim % n) as usize]
    }
}

impl HogwildWorld {
    pub fn new(teacher: Box<dyn Teacher>, agent: Arc<dyn ConcurrentAgent>, config: HogwildConfig) -> Result<Self, WorldError> {
        if config.workers == 0 {
            return Err(WorldError::Contract("worker count must be at least 1".into()));
        }
        Ok(HogwildWorld { teacher, agent, config })
    }

    /// Runs every worker to completion and merges their reports. The first
    /// worker error stops the others and is returned.
    pub fn run(&self) -> Result<MetricsReport, WorldError> {
        let layout = Layout::new(self.teacher.as_ref());
        if layout.total == 0 || self.config.budget == 0 {
            return Ok(MetricsReport::new());
        }
        let claims = AtomicU64::new(0);
        let cancel = AtomicBool::new(false);
        let first_error: Mutex<Option<WorldError>> = Mutex::new(None);
        let teachers: Vec<Box<dyn Teacher>> = (0..self.config.workers).map(|_| self.teacher.shard(0, 1)).collect();

        let reports: Vec<MetricsReport> = std::thread::scope(|scope| {
            let handles: Vec<_> = teachers
                .into_iter()
                .enumerate()
                .map(|(w, mut teacher)| {
                    let (layout, claims, cancel, first_error) = (&layout, &claims, &cancel, &first_error);
                    let agent = self.agent.clone();
                    let budget = self.config.budget;
                    scope.spawn(move || {
                        if let Err(e) = work(teacher.as_mut(), agent.as_ref(), layout, claims, cancel, budget) {
                            cancel.store(true, Ordering::SeqCst);
                            let mut slot = first_error.lock().unwrap_or_else(|p| p.into_inner());
                            slot.get_or_insert(WorldError::Worker { worker: w, source: Box::new(e) });
                        }
                        teacher.report()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("hogwild worker panicked")).collect()
        });

        if let Some(e) = first_error.into_inner().unwrap_or_else(|p| p.into_inner()) {
            return Err(e);
        }
        let mut merged = MetricsReport::new();
        for r in &reports {
            merged.merge_from(r);
        }
        Ok(merged)
    }
}

fn work(
    teacher: &mut dyn Teacher,
    agent: &dyn ConcurrentAgent,
    layout: &Layout,
    claims: &AtomicU64,
    cancel: &AtomicBool,
    budget: u64,
) -> Result<(), WorldError> {
    let n = layout.lens.len() as u64;
    loop {
        let claim = claims.fetch_add(1, Ordering::SeqCst);
        let start = layout.prefix(claim);
        if start >= budget {
            return Ok(());
        }
        let episode = (claim % n) as usize;
        teacher.seek_episode(episode);
        for t in 0..layout.lens[episode] {
            if start + t >= budget || cancel.load(Ordering::SeqCst) {
                return Ok(());
            }
            let msg = teacher.act()?;
            let msg = checked(teacher.id(), msg)?;
            let reply = checked(agent.id(), agent.respond(&msg)?)?;
            teacher.observe(&reply)?;
        }
    }
}
