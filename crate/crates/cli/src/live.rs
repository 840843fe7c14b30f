//! Sessions with people and peers: terminal chat, the hosting server, the
//! peer runner and the two human tasks.

use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use parlance_bridge::{serve_peer, Gateway, GatewayError, SessionMode};
use parlance_core::agents::{Agent, AgentError, RepeatLabelAgent, Teacher};
use parlance_core::human::{HumanStore, ModelEvaluatorWorld, QaCollectorWorld, ScriptedHuman};
use parlance_core::ir::IrBaseline;
use parlance_core::worlds::{display_messages, DialogPartnerWorld, MultiAgentDialogWorld, TranscriptSink, World, WorldError};
use parlance_core::{DataMode, Message};

use crate::args::{CollectArgs, DataArgs, EvaluateHumanArgs, HumanArgs, InteractiveArgs, ModelArgs, PeerArgs, ServeArgs};
use crate::commands::teacher;
use crate::models::{accept_remote, stats_or_empty, timeout, usage, ModelKind};

/// The person at the keyboard. Candidates are listed with numbers and a
/// number picks that candidate; `exit` or end of input leaves.
pub struct TerminalAgent<R, W> {
    id: String,
    input: R,
    output: W,
    candidates: Vec<String>,
}

impl<R: BufRead + Send, W: Write + Send> TerminalAgent<R, W> {
    pub const ID: &'static str = "localHuman";

    pub fn new(input: R, output: W) -> Self {
        TerminalAgent { id: Self::ID.to_string(), input, output, candidates: Vec::new() }
    }

    fn write(&mut self, text: &str) -> Result<(), AgentError> {
        self.output
            .write_all(text.as_bytes())
            .and_then(|()| self.output.flush())
            .map_err(|e| AgentError::failed(&self.id, e))
    }
}

impl<R: BufRead + Send, W: Write + Send> Agent for TerminalAgent<R, W> {
    fn id(&self) -> &str {
        &self.id
    }

    fn observe(&mut self, observation: &Message) -> Result<(), AgentError> {
        let mut text = display_messages(std::slice::from_ref(observation));
        text.push('\n');
        self.candidates =
            observation.label_candidates.clone().or_else(|| observation.text_candidates.clone()).unwrap_or_default();
        for (i, c) in self.candidates.iter().enumerate() {
            text.push_str(&format!("  {}. {c}\n", i + 1));
        }
        self.write(&text)
    }

    fn act(&mut self) -> Result<Message, AgentError> {
        loop {
            self.write("> ")?;
            let mut line = String::new();
            let n = self.input.read_line(&mut line).map_err(|e| AgentError::failed(&self.id, e))?;
            let line = line.trim();
            if n == 0 || line == "exit" {
                return Err(AgentError::EndOfSession(self.id.clone()));
            }
            if line.is_empty() {
                continue;
            }
            let text = match line.parse::<usize>() {
                Ok(k) if (1..=self.candidates.len()).contains(&k) => self.candidates[k - 1].clone(),
                _ => line.to_string(),
            };
            return Ok(Message::with_text(text).id(self.id.clone()));
        }
    }
}

/// Appends every message as one JSON line.
pub struct JsonlSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::options()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("cannot open transcript {}", path.display()))?;
        Ok(JsonlSink { path: path.to_path_buf(), out: BufWriter::new(file) })
    }
}

impl TranscriptSink for JsonlSink {
    fn record(&mut self, message: &Message) {
        if let Ok(mut line) = message.to_canonical_json() {
            line.push(b'\n');
            if let Err(e) = self.out.write_all(&line) {
                eprintln!("cannot write transcript {}: {e}", self.path.display());
            }
        }
    }

    fn flush(&mut self) {
        let _ = self.out.flush();
    }
}

fn data_args(task: &str, datatype: DataMode, seed: u64, datapath: &Path) -> DataArgs {
    DataArgs {
        task: task.to_string(),
        datatype,
        seed,
        datapath: datapath.to_path_buf(),
        download: false,
        mix: Default::default(),
    }
}

/// A chat partner: a built-in model or a peer that joins on `remote:`.
fn partner(args: &ModelArgs) -> Result<Box<dyn Agent>> {
    match ModelKind::parse(&args.model)? {
        ModelKind::RepeatLabel => Ok(Box::new(RepeatLabelAgent::new())),
        ModelKind::IrBaseline => Ok(Box::new(IrBaseline::new(stats_or_empty(&args.model_file)?))),
        ModelKind::Remote(addr) => accept_remote(&addr, timeout(args)?),
    }
}

/// True when the error only means somebody left.
fn session_over(e: &WorldError) -> bool {
    matches!(e.agent_error(), Some(AgentError::EndOfSession(_) | AgentError::Disconnected(_)))
}

fn with_transcript<T>(world: T, path: &Option<PathBuf>, attach: impl FnOnce(T, Box<dyn TranscriptSink>) -> T) -> Result<T> {
    match path {
        Some(p) => Ok(attach(world, Box::new(JsonlSink::create(p)?))),
        None => Ok(world),
    }
}

/// Plays until the epoch ends, `limit` parleys pass, or someone leaves.
fn run_until_done(world: &mut dyn World, limit: Option<usize>, echo: bool) -> Result<()> {
    let mut steps = 0;
    while !world.epoch_done() && limit.is_none_or(|l| steps < l) {
        match world.parley() {
            Ok(()) => {
                steps += 1;
                if echo {
                    println!("{}", world.display());
                }
            }
            Err(e) if session_over(&e) => {
                eprintln!("{e}");
                break;
            }
            Err(e) => {
                world.shutdown();
                return Err(e.into());
            }
        }
    }
    world.shutdown();
    Ok(())
}

pub fn interactive(args: InteractiveArgs) -> Result<()> {
    let user = TerminalAgent::new(io::BufReader::new(io::stdin()), io::stdout());
    run_interactive(args, user)
}

pub fn run_interactive<R: BufRead + Send + 'static, W: Write + Send + 'static>(
    args: InteractiveArgs,
    user: TerminalAgent<R, W>,
) -> Result<()> {
    match &args.task {
        Some(task) => {
            let teacher = teacher(&data_args(task, args.datatype, args.seed, &args.datapath), args.datatype)?;
            let world = DialogPartnerWorld::new(teacher, Box::new(user));
            let mut world = with_transcript(world, &args.transcript, |w, s| w.with_sink(s))?;
            run_until_done(&mut world, None, false)?;
            print!("{}", world.report().render());
        }
        None => {
            let model = partner(&args.model)?;
            println!("Chatting with {}. Type `exit` to leave.", model.id());
            let world = MultiAgentDialogWorld::new(vec![Box::new(user), model])?;
            let mut world = with_transcript(world, &args.transcript, |w, s| w.with_sink(s))?;
            run_until_done(&mut world, None, false)?;
        }
    }
    Ok(())
}

fn gateway_human(host: &str, port: u16, wait: Duration, mode: SessionMode) -> Result<Box<dyn Agent>> {
    let gateway = Gateway::bind((host, port)).map_err(GatewayError::from).with_context(|| format!("cannot listen on {host}:{port}"))?;
    eprintln!("waiting for a participant on ws://{}/agent", gateway.local_addr()?);
    let human = gateway.accept(wait)?.with_mode(mode).with_timeout(wait);
    eprintln!("participant {} joined", human.session());
    Ok(Box::new(human))
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let wait = timeout(&args.model)?;
    let teacher: Option<Box<dyn Teacher>> = match &args.task {
        Some(task) => Some(teacher(&data_args(task, args.datatype, args.seed, &args.datapath), args.datatype)?),
        None => None,
    };
    if teacher.is_some() && args.port.is_some() && args.ws_port.is_some() {
        return Err(usage("a task session hosts either a peer (--port) or a participant (--ws-port), not both"));
    }
    if teacher.is_none() && args.ws_port.is_none() {
        return Err(usage("a chat session needs a participant: pass --ws-port"));
    }
    let model = || -> Result<Box<dyn Agent>> {
        match args.port {
            Some(port) => accept_remote(&format!("{}:{port}", args.host), wait),
            None => partner(&args.model),
        }
    };
    let human = match args.ws_port {
        Some(port) => Some(gateway_human(&args.host, port, wait, SessionMode::Chat)?),
        None => None,
    };
    match teacher {
        Some(teacher) => {
            let learner = match human {
                Some(h) => h,
                None => model()?,
            };
            let world = DialogPartnerWorld::new(teacher, learner);
            let mut world = with_transcript(world, &args.transcript, |w, s| w.with_sink(s))?;
            run_until_done(&mut world, args.num_examples, true)?;
            print!("{}", world.report().render());
        }
        None => {
            let human = human.expect("checked above");
            let world = MultiAgentDialogWorld::new(vec![human, model()?])?;
            let mut world = with_transcript(world, &args.transcript, |w, s| w.with_sink(s))?;
            run_until_done(&mut world, args.num_examples, true)?;
        }
    }
    Ok(())
}

pub fn peer(args: PeerArgs) -> Result<()> {
    let mut agent: Box<dyn Agent> = match ModelKind::parse(&args.model)? {
        ModelKind::RepeatLabel => Box::new(RepeatLabelAgent::new()),
        ModelKind::IrBaseline => Box::new(IrBaseline::new(stats_or_empty(&args.model_file)?)),
        ModelKind::Remote(_) => return Err(usage("a peer runs a built-in model")),
    };
    let summary = serve_peer(args.connect.as_str(), agent.as_mut())?;
    println!("{}: observed {} messages, answered {}", summary.session, summary.observed, summary.acted);
    Ok(())
}

fn human(args: &HumanArgs, mode: SessionMode) -> Result<Box<dyn Agent>> {
    match &args.script {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            Ok(Box::new(ScriptedHuman::new("script", text.lines())))
        }
        None => {
            let wait = Duration::try_from_secs_f64(args.human_timeout)
                .map_err(|_| usage(format!("bad timeout {}", args.human_timeout)))?;
            gateway_human(&args.host, args.ws_port, wait, mode)
        }
    }
}

/// Paragraphs separated by blank lines.
pub fn read_contexts(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for line in text.lines().map(str::trim).chain(std::iter::once("")) {
        if line.is_empty() {
            if !cur.is_empty() {
                out.push(cur.join("\n"));
                cur.clear();
            }
        } else {
            cur.push(line);
        }
    }
    if out.is_empty() {
        return Err(usage(format!("{} holds no context paragraphs", path.display())));
    }
    Ok(out)
}

/// Plays human-task episodes; an unusable episode is counted and skipped,
/// a departure ends the run.
fn run_human_world(world: &mut dyn World, episodes: usize) -> Result<()> {
    let mut played = 0;
    while !world.epoch_done() && played < episodes {
        played += 1;
        let result = world.parley();
        println!("{}", world.display());
        match result {
            Ok(()) => {}
            Err(e) if session_over(&e) => {
                eprintln!("{e}");
                break;
            }
            Err(WorldError::Agent(AgentError::Protocol { reason, .. })) => eprintln!("episode abandoned: {reason}"),
            Err(e) => {
                world.shutdown();
                return Err(e.into());
            }
        }
    }
    world.shutdown();
    Ok(())
}

pub fn collect(args: CollectArgs) -> Result<()> {
    let contexts = read_contexts(&args.task_context)?;
    let store = HumanStore::in_dir(&args.human.out)?;
    let human = human(&args.human, SessionMode::Collector)?;
    let mut world = QaCollectorWorld::new(contexts, human, &store)?.with_target(args.count);
    run_human_world(&mut world, usize::MAX)?;
    println!(
        "collected {} question/answer pairs ({} abandoned) in {}",
        world.completed(),
        world.abandoned(),
        args.human.out.display()
    );
    Ok(())
}

pub fn evaluate_human(args: EvaluateHumanArgs) -> Result<()> {
    let data = data_args(&args.task, args.datatype, args.seed, &args.datapath);
    let teacher = teacher(&data, args.datatype)?;
    let bot = partner(&args.model)?;
    let store = HumanStore::in_dir(&args.human.out)?;
    let human = human(&args.human, SessionMode::Evaluator)?;
    let mut world = ModelEvaluatorWorld::new(teacher, bot, human, &store);
    run_human_world(&mut world, args.episodes)?;
    let s = store.rating_summary();
    println!("ratings: count={} mean={:.4} stddev={:.4}", s.count, s.mean, s.stddev);
    Ok(())
}
