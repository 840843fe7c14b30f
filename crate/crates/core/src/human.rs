//! Human-in-the-loop worlds: collecting question/answer pairs about a
//! paragraph, and rating a bot's dialog on a task.

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agents::{Agent, AgentError, Teacher};
use crate::messages::Message;
use crate::metrics::MetricsReport;
use crate::worlds::{checked, display_messages, World, WorldError};

pub const QA_FILE: &str = "collected_qa.jsonl";
pub const QA_FBDIALOG_FILE: &str = "collected_qa.fbdialog";
pub const RATINGS_FILE: &str = "ratings.jsonl";

/// Prompts after which a participant who keeps sending unusable replies
/// is treated as having left.
pub const DEFAULT_MAX_REPROMPTS: usize = 3;

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectedQA {
    pub context: String,
    pub question: String,
    pub answer: String,
    pub collector_session: String,
    pub timestamp: u64,
}

impl CollectedQA {
    /// One fbdialog line: context and question as the text, the answer as
    /// the label. Tabs and newlines become spaces and `|` becomes `/` so the
    /// line survives the format's separators.
    pub fn to_fbdialog_line(&self) -> String {
        let flat = |s: &str| s.replace(['\t', '\n', '\r'], " ").replace('|', "/");
        format!("1 {} {}\t{}", flat(&self.context), flat(&self.question), flat(&self.answer))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingRecord {
    pub task: String,
    pub transcript: Vec<Message>,
    pub rating: u8,
    pub rater_session: String,
    pub timestamp: u64,
}

impl RatingRecord {
    pub fn to_json(&self) -> Value {
        let transcript: Vec<Value> =
            self.transcript.iter().map(|m| m.to_json_value().unwrap_or(Value::Null)).collect();
        json!({
            "task": self.task,
            "transcript": transcript,
            "rating": self.rating,
            "rater_session": self.rater_session,
            "timestamp": self.timestamp,
        })
    }
}

/// Mean and population standard deviation of collected ratings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingSummary {
    pub count: usize,
    pub mean: f64,
    pub stddev: f64,
}

impl RatingSummary {
    pub fn of(ratings: &[u8]) -> RatingSummary {
        let count = ratings.len();
        if count == 0 {
            return RatingSummary { count, mean: 0.0, stddev: 0.0 };
        }
        let mean = ratings.iter().map(|&r| f64::from(r)).sum::<f64>() / count as f64;
        let var = ratings.iter().map(|&r| (f64::from(r) - mean).powi(2)).sum::<f64>() / count as f64;
        RatingSummary { count, mean, stddev: var.sqrt() }
    }
}

/// Append-only record store, optionally mirrored to files in a directory.
#[derive(Debug)]
pub struct HumanStore {
    dir: Option<PathBuf>,
    qa: Mutex<Vec<CollectedQA>>,
    ratings: Mutex<Vec<RatingRecord>>,
}

impl HumanStore {
    pub fn in_memory() -> Self {
        HumanStore { dir: None, qa: Mutex::new(Vec::new()), ratings: Mutex::new(Vec::new()) }
    }

    /// Records are appended to `collected_qa.jsonl`, `collected_qa.fbdialog`
    /// and `ratings.jsonl` under `dir`.
    pub fn in_dir(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(HumanStore { dir: Some(dir.to_path_buf()), ..Self::in_memory() })
    }

    fn append(&self, file: &str, line: &str) -> io::Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut f: File = OpenOptions::new().create(true).append(true).open(dir.join(file))?;
        writeln!(f, "{line}")
    }

    pub fn add_qa(&self, record: CollectedQA) -> io::Result<()> {
        let mut qa = self.qa.lock().unwrap_or_else(|e| e.into_inner());
        let line = serde_json::to_string(&record).map_err(io::Error::other)?;
        self.append(QA_FILE, &line)?;
        self.append(QA_FBDIALOG_FILE, &record.to_fbdialog_line())?;
        qa.push(record);
        Ok(())
    }

    pub fn add_rating(&self, record: RatingRecord) -> io::Result<()> {
        let mut ratings = self.ratings.lock().unwrap_or_else(|e| e.into_inner());
        self.append(RATINGS_FILE, &record.to_json().to_string())?;
        ratings.push(record);
        Ok(())
    }

    pub fn qa(&self) -> Vec<CollectedQA> {
        self.qa.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn ratings(&self) -> Vec<RatingRecord> {
        self.ratings.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn rating_summary(&self) -> RatingSummary {
        let r: Vec<u8> = self.ratings.lock().unwrap_or_else(|e| e.into_inner()).iter().map(|r| r.rating).collect();
        RatingSummary::of(&r)
    }
}

/// A participant that replies from a fixed script and disconnects when the
/// script runs out. Stands in for a person in tests.
#[derive(Debug, Clone)]
pub struct ScriptedHuman {
    id: String,
    replies: VecDeque<String>,
    seen: Vec<Message>,
    acts: usize,
}

impl ScriptedHuman {
    pub fn new<I, S>(id: &str, replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedHuman { id: id.to_string(), replies: replies.into_iter().map(Into::into).collect(), seen: Vec::new(), acts: 0 }
    }

    pub fn seen(&self) -> &[Message] {
        &self.seen
    }
}

impl Agent for ScriptedHuman {
    fn id(&self) -> &str {
        &self.id
    }

    fn observe(&mut self, observation: &Message) -> Result<(), AgentError> {
        self.seen.push(observation.clone());
        Ok(())
    }

    fn act(&mut self) -> Result<Message, AgentError> {
        self.acts += 1;
        match self.replies.pop_front() {
            Some(text) => Ok(Message::with_text(text).id(self.id.clone())),
            None => Err(AgentError::Disconnected(self.id.clone())),
        }
    }
}

/// Asks the human, re-prompting while `accept` rejects the reply.
fn ask<T>(
    human: &mut dyn Agent,
    prompt: Message,
    reprompt: &str,
    max_reprompts: usize,
    shown: &mut Vec<Message>,
    accept: impl Fn(&str) -> Option<T>,
) -> Result<T, AgentError> {
    let mut prompt = prompt;
    for _ in 0..=max_reprompts {
        human.observe(&prompt)?;
        shown.push(prompt.clone());
        let reply = human.act()?;
        let reply = checked(human.id(), reply)?;
        let value = accept(reply.text.as_deref().unwrap_or(""));
        shown.push(reply);
        if let Some(v) = value {
            return Ok(v);
        }
        prompt = Message::with_text(reprompt).id(prompt.id.clone().unwrap_or_default());
    }
    Err(AgentError::Protocol { agent: human.id().to_string(), reason: "too many unusable replies".into() })
}

fn non_empty(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Shows a paragraph, asks for a question about it and then for the
/// answer. Each parley is one full collection episode.
pub struct QaCollectorWorld<'s> {
    contexts: Vec<String>,
    next: usize,
    human: Box<dyn Agent>,
    store: &'s HumanStore,
    max_reprompts: usize,
    completed: usize,
    abandoned: usize,
    target: Option<usize>,
    last: Vec<Message>,
    done: bool,
}

impl<'s> QaCollectorWorld<'s> {
    pub const ID: &'static str = "QACollector";

    pub fn new(contexts: Vec<String>, human: Box<dyn Agent>, store: &'s HumanStore) -> Result<Self, WorldError> {
        if contexts.is_empty() {
            return Err(WorldError::Contract("no context paragraphs to collect on".into()));
        }
        Ok(QaCollectorWorld {
            contexts,
            next: 0,
            human,
            store,
            max_reprompts: DEFAULT_MAX_REPROMPTS,
            completed: 0,
            abandoned: 0,
            target: None,
            last: Vec::new(),
            done: false,
        })
    }

    /// Stop after this many collected pairs.
    pub fn with_target(mut self, count: usize) -> Self {
        self.target = Some(count);
        self
    }

    pub fn with_max_reprompts(mut self, n: usize) -> Self {
        self.max_reprompts = n;
        self
    }

    pub fn completed(&self) -> usize {
        self.completed
    }

    pub fn abandoned(&self) -> usize {
        self.abandoned
    }

    /// Everything exchanged in the last episode.
    pub fn transcript(&self) -> &[Message] {
        &self.last
    }

    fn episode(&mut self, context: &str, shown: &mut Vec<Message>) -> Result<CollectedQA, AgentError> {
        let human = self.human.as_mut();
        let intro = Message::with_text(format!("{context}\n\nPlease ask a question about this paragraph.")).id(Self::ID);
        let question = ask(human, intro, "Please type a question.", self.max_reprompts, shown, non_empty)?;
        let prompt = Message::with_text(format!("Now answer your question: {question}")).id(Self::ID);
        let answer = ask(human, prompt, "Please type an answer.", self.max_reprompts, shown, non_empty)?;
        let thanks = Message::with_text("Thank you!").id(Self::ID).done(true);
        human.observe(&thanks)?;
        shown.push(thanks);
        Ok(CollectedQA {
            context: context.to_string(),
            question,
            answer,
            collector_session: human.id().to_string(),
            timestamp: unix_now(),
        })
    }
}

impl World for QaCollectorWorld<'_> {
    /// A participant who leaves or keeps sending empty replies abandons the
    /// episode; nothing is stored and the error is returned.
    fn parley(&mut self) -> Result<(), WorldError> {
        let context = self.contexts[self.next % self.contexts.len()].clone();
        self.next += 1;
        let mut shown = Vec::new();
        let result = self.episode(&context, &mut shown);
        self.last = shown;
        match result {
            Ok(record) => {
                self.store.add_qa(record).map_err(|e| WorldError::Contract(format!("cannot store record: {e}")))?;
                self.completed += 1;
                Ok(())
            }
            Err(e) => {
                self.abandoned += 1;
                if matches!(e, AgentError::Disconnected(_)) {
                    self.done = true;
                }
                Err(e.into())
            }
        }
    }

    fn display(&self) -> String {
        self.last.iter().map(|m| display_messages(std::slice::from_ref(m))).collect::<Vec<_>>().join("\n")
    }

    fn episode_done(&self) -> bool {
        self.last.last().is_some_and(|m| m.episode_done)
    }

    fn epoch_done(&self) -> bool {
        self.done || self.target.is_some_and(|t| self.completed >= t)
    }

    fn report(&self) -> MetricsReport {
        MetricsReport { abandoned_episodes: self.abandoned as u64, ..Default::default() }
    }

    fn shutdown(&mut self) {
        self.human.shutdown();
    }
}

/// Runs one teacher episode between the task and a bot, streaming every
/// message to a human rater, then asks for a rating from 1 to 5. Each
/// parley is one rated episode.
pub struct ModelEvaluatorWorld<'s> {
    task: String,
    teacher: Box<dyn Teacher>,
    bot: Box<dyn Agent>,
    human: Box<dyn Agent>,
    store: &'s HumanStore,
    max_reprompts: usize,
    abandoned: usize,
    last: Vec<Message>,
    done: bool,
}

pub fn parse_rating(s: &str) -> Option<u8> {
    s.trim().parse::<u8>().ok().filter(|r| (1..=5).contains(r))
}

impl<'s> ModelEvaluatorWorld<'s> {
    pub const ID: &'static str = "ModelEvaluator";

    pub fn new(teacher: Box<dyn Teacher>, bot: Box<dyn Agent>, human: Box<dyn Agent>, store: &'s HumanStore) -> Self {
        ModelEvaluatorWorld {
            task: teacher.id().to_string(),
            teacher,
            bot,
            human,
            store,
            max_reprompts: DEFAULT_MAX_REPROMPTS,
            abandoned: 0,
            last: Vec::new(),
            done: false,
        }
    }

    pub fn with_max_reprompts(mut self, n: usize) -> Self {
        self.max_reprompts = n;
        self
    }

    /// The task/bot messages of the last episode, as the rater saw them.
    pub fn transcript(&self) -> Vec<Message> {
        self.last.iter().filter(|m| m.id.as_deref() != Some(Self::ID) && m.id.as_deref() != Some(self.human.id())).cloned().collect()
    }

    /// Everything exchanged in the last episode, prompts included.
    pub fn exchange(&self) -> &[Message] {
        &self.last
    }

    fn dialog_step(&mut self, shown: &mut Vec<Message>) -> Result<bool, AgentError> {
        let msg = self.teacher.act()?;
        let msg = checked(self.teacher.id(), msg)?;
        self.bot.observe(&msg)?;
        let reply = self.bot.act()?;
        let reply = checked(self.bot.id(), reply)?;
        self.teacher.observe(&reply)?;
        let done = msg.episode_done;
        for m in [msg, reply] {
            self.human.observe(&m)?;
            shown.push(m);
        }
        Ok(done)
    }

    fn episode(&mut self, shown: &mut Vec<Message>) -> Result<RatingRecord, AgentError> {
        while !self.dialog_step(shown)? {}
        let transcript = shown.clone();
        let prompt = Message::with_text("How well did the bot do? Reply with a rating from 1 (bad) to 5 (good).").id(Self::ID);
        let rating = ask(
            self.human.as_mut(),
            prompt,
            "Please reply with a whole number from 1 to 5.",
            self.max_reprompts,
            shown,
            parse_rating,
        )?;
        let thanks = Message::with_text("Thank you!").id(Self::ID).done(true);
        self.human.observe(&thanks)?;
        shown.push(thanks);
        Ok(RatingRecord {
            task: self.task.clone(),
            transcript,
            rating,
            rater_session: self.human.id().to_string(),
            timestamp: unix_now(),
        })
    }
}

impl World for ModelEvaluatorWorld<'_> {
    fn parley(&mut self) -> Result<(), WorldError> {
        if self.epoch_done() {
            return Err(WorldError::Contract("the task has no more episodes".into()));
        }
        let mut shown = Vec::new();
        let result = self.episode(&mut shown);
        let mid_dialog = !shown.iter().any(|m| m.id.as_deref() == Some(Self::ID));
        self.last = shown;
        match result {
            Ok(record) => {
                self.store.add_rating(record).map_err(|e| WorldError::Contract(format!("cannot store record: {e}")))?;
                Ok(())
            }
            Err(e) => {
                self.abandoned += 1;
                if mid_dialog {
                    self.teacher.abandon_episode();
                }
                if matches!(e, AgentError::Disconnected(_)) {
                    self.done = true;
                }
                Err(e.into())
            }
        }
    }

    fn display(&self) -> String {
        self.last.iter().map(|m| display_messages(std::slice::from_ref(m))).collect::<Vec<_>>().join("\n")
    }

    fn episode_done(&self) -> bool {
        self.last.last().is_some_and(|m| m.episode_done)
    }

    fn epoch_done(&self) -> bool {
        self.done || self.teacher.epoch_done()
    }

    /// The task's metrics for the bot; rated episodes abandoned during the
    /// rating prompt are counted too.
    fn report(&self) -> MetricsReport {
        let mut r = self.teacher.report();
        r.abandoned_episodes = r.abandoned_episodes.max(self.abandoned as u64);
        r
    }

    fn shutdown(&mut self) {
        self.teacher.shutdown();
        self.bot.shutdown();
        self.human.shutdown();
    }
}
