//! Information-retrieval baseline: document frequencies from the training
//! stream, candidates ranked by shared-token idf².

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::sync::RwLock;

use thiserror::Error;

use crate::agents::{Agent, AgentError, ConcurrentAgent, FALLBACK_REPLY};
use crate::messages::Message;
use crate::metrics::normalize_answer;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn tokens(text: &str) -> BTreeSet<String> {
    normalize_answer(text).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

/// Document frequencies over normalized tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermStats {
    pub doc_count: u64,
    pub doc_freq: BTreeMap<String, u64>,
}

impl TermStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts one document. Repeated tokens count once.
    pub fn ingest(&mut self, text: &str) {
        self.doc_count += 1;
        for t in tokens(text) {
            *self.doc_freq.entry(t).or_default() += 1;
        }
    }

    pub fn merge_from(&mut self, other: &TermStats) {
        self.doc_count += other.doc_count;
        for (t, n) in &other.doc_freq {
            *self.doc_freq.entry(t.clone()).or_default() += n;
        }
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.doc_freq.get(token).copied().unwrap_or(0);
        (1.0 + self.doc_count as f64 / (1.0 + df as f64)).ln()
    }

    /// Sum of idf² over the distinct tokens shared by query and candidate.
    pub fn score(&self, query: &str, candidate: &str) -> f64 {
        let q = tokens(query);
        tokens(candidate).intersection(&q).map(|t| self.idf(t).powi(2)).sum()
    }

    /// Distinct candidates by descending score, ties in ascending
    /// lexicographic order.
    pub fn rank(&self, query: &str, candidates: &[String]) -> Vec<(String, f64)> {
        let q = tokens(query);
        let distinct: BTreeSet<&String> = candidates.iter().collect();
        let mut scored: Vec<(String, f64)> = distinct
            .into_iter()
            .map(|c| {
                let s = tokens(c).intersection(&q).map(|t| self.idf(t).powi(2)).sum();
                (c.clone(), s)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
        scored
    }

    /// `#doc_count\t<n>` followed by `token\tcount` lines in token order.
    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "#doc_count\t{}", self.doc_count)?;
        for (t, n) in &self.doc_freq {
            writeln!(out, "{t}\t{n}")?;
        }
        out.flush()
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<TermStats, StatsError> {
        let bad = |line: usize, reason: &str| StatsError::Format { line, reason: reason.to_string() };
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))??;
        let doc_count = header
            .strip_prefix("#doc_count\t")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad(1, "expected `#doc_count<TAB>n`"))?;
        let mut stats = TermStats { doc_count, doc_freq: BTreeMap::new() };
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (t, n) = line.split_once('\t').ok_or_else(|| bad(i + 2, "expected `token<TAB>count`"))?;
            let n: u64 = n.parse().map_err(|_| bad(i + 2, "count is not an integer"))?;
            if n > doc_count {
                return Err(bad(i + 2, "count exceeds doc_count"));
            }
            stats.doc_freq.insert(t.to_string(), n);
        }
        Ok(stats)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let tmp = path.with_extension("tmp");
        self.write_to(io::BufWriter::new(fs::File::create(&tmp)?))?;
        fs::rename(tmp, path)
    }

    pub fn load(path: &Path) -> Result<TermStats, StatsError> {
        TermStats::read_from(io::BufReader::new(fs::File::open(path)?))
    }
}

/// Reply to `observation`: the best label candidate with the full ranking
/// in `text_candidates`, or the fallback text when there are no candidates.
pub fn ir_act(observation: &Message, stats: &TermStats, id: &str) -> Message {
    let query = observation.text.as_deref().unwrap_or("");
    let ranked = match observation.label_candidates.as_deref() {
        Some(c) if !c.is_empty() => stats.rank(query, c),
        _ => return Message::with_text(FALLBACK_REPLY).id(id),
    };
    let text = ranked[0].0.clone();
    Message::with_text(text).id(id).text_candidates(ranked.into_iter().map(|(c, _)| c))
}

/// The baseline as an agent. In training mode every observed text is
/// ingested before replying; otherwise the statistics are read-only, which
/// makes it safe to share between hogwild workers.
#[derive(Debug)]
pub struct IrBaseline {
    id: String,
    stats: RwLock<TermStats>,
    training: AtomicBool,
    last: Option<Message>,
}

impl IrBaseline {
    pub const ID: &'static str = "IRBaselineAgent";

    pub fn new(stats: TermStats) -> Self {
        IrBaseline {
            id: Self::ID.to_string(),
            stats: RwLock::new(stats),
            training: AtomicBool::new(false),
            last: None,
        }
    }

    pub fn set_training(&self, on: bool) {
        self.training.store(on, AtomicOrdering::SeqCst);
    }

    pub fn training(&self) -> bool {
        self.training.load(AtomicOrdering::SeqCst)
    }

    pub fn stats(&self) -> TermStats {
        self.stats.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn learn(&self, observation: &Message) {
        if !self.training() {
            return;
        }
        if let Some(text) = observation.text.as_deref() {
            self.stats.write().unwrap_or_else(|e| e.into_inner()).ingest(text);
        }
    }

    fn reply(&self, observation: &Message) -> Message {
        let stats = self.stats.read().unwrap_or_else(|e| e.into_inner());
        ir_act(observation, &stats, &self.id)
    }
}

impl Agent for IrBaseline {
    fn id(&self) -> &str {
        &self.id
    }

    fn observe(&mut self, observation: &Message) -> Result<(), AgentError> {
        self.learn(observation);
        self.last = Some(observation.clone());
        Ok(())
    }

    fn act(&mut self) -> Result<Message, AgentError> {
        let obs = self.last.take().unwrap_or_default();
        Ok(self.reply(&obs))
    }

    fn reset(&mut self) {
        self.last = None;
    }

    fn batch_act(&mut self, observations: &[Message]) -> Option<Result<Vec<Message>, AgentError>> {
        for obs in observations {
            self.learn(obs);
        }
        Some(Ok(observations.iter().map(|o| self.reply(o)).collect()))
    }
}

impl ConcurrentAgent for IrBaseline {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&self, observation: &Message) -> Result<Message, AgentError> {
        self.learn(observation);
        Ok(self.reply(observation))
    }
}
