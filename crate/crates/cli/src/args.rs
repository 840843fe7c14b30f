use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use parlance_core::agents::MixPolicy;
use parlance_core::DataMode;

#[derive(Parser, Debug)]
#[command(name = "parlance", version, about = "Run dialog tasks, models and human sessions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Show what a task looks like: the teacher's messages with the
    /// repeat-label answer under each.
    #[command(name = "display_data", alias = "display-data")]
    DisplayData(DisplayArgs),
    /// One ordered pass over a split, scored.
    #[command(name = "eval_model", alias = "eval-model")]
    EvalModel(EvalArgs),
    /// Fit the retrieval baseline on the train split, validating as it goes.
    #[command(name = "train_model", alias = "train-model")]
    TrainModel(TrainArgs),
    /// Chat with a model or answer a task from the terminal.
    Interactive(InteractiveArgs),
    /// Host a world for a remote model peer and/or a browser participant.
    Serve(ServeArgs),
    /// Run a built-in model as a remote peer of a world elsewhere.
    Peer(PeerArgs),
    /// Collect question/answer pairs from a person.
    Collect(CollectArgs),
    /// Have a person rate a model's episodes on a task.
    #[command(name = "evaluate-human", alias = "evaluate_human")]
    EvaluateHuman(EvaluateHumanArgs),
    /// Download and install task data under the data root.
    Build(BuildArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Task expression, e.g. `babi:Task1k:1`, `babi,squad`, `#qa`.
    #[arg(short = 't', long = "task")]
    pub task: String,
    /// train, train:ordered, valid or test. `-dt` is accepted too.
    #[arg(long = "datatype", default_value = "train")]
    pub datatype: DataMode,
    /// Seeds every random choice (sampling, task mixing).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "PARLANCE_DATA", default_value = "data")]
    pub datapath: PathBuf,
    /// Use the full corpora under the data root, fetching them if missing,
    /// instead of the bundled samples.
    #[arg(long)]
    pub download: bool,
    /// How several tasks are mixed: uniform or size.
    #[arg(long, default_value = "uniform")]
    pub mix: MixPolicy,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// repeat_label, ir_baseline or remote:<listen address>.
    #[arg(short = 'm', long = "model", default_value = "repeat_label")]
    pub model: String,
    /// Term statistics for ir_baseline.
    #[arg(long = "model-file", default_value = "ir_baseline.stats")]
    pub model_file: PathBuf,
    /// Seconds to wait for a remote peer to connect and to answer.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
}

#[derive(Args, Debug, Clone)]
pub struct ExecArgs {
    #[arg(short = 'b', long = "batch-size", default_value_t = 1)]
    pub batch_size: usize,
    /// Hogwild worker threads sharing one model.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args, Debug)]
pub struct DisplayArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(short = 'n', long = "num-examples", default_value_t = 10)]
    pub num_examples: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub exec: ExecArgs,
    /// Stop after this many examples instead of a full pass.
    #[arg(short = 'n', long = "num-examples")]
    pub num_examples: Option<u64>,
    /// Print every step as it is played.
    #[arg(long)]
    pub render: bool,
    /// Write the report as JSON here.
    #[arg(long = "report-json")]
    pub report_json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub exec: ExecArgs,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Validate after every this many epochs.
    #[arg(long = "validate-every", default_value_t = 1)]
    pub validate_every: usize,
    /// Write the final validation report as JSON here.
    #[arg(long = "report-json")]
    pub report_json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InteractiveArgs {
    /// Answer this task's questions instead of chatting with a model.
    #[arg(short = 't', long = "task")]
    pub task: Option<String>,
    #[arg(long = "datatype", default_value = "valid")]
    pub datatype: DataMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "PARLANCE_DATA", default_value = "data")]
    pub datapath: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Append the session's messages here as JSON lines.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Task the session is played on; without it the participant chats
    /// with the model.
    #[arg(short = 't', long = "task")]
    pub task: Option<String>,
    #[arg(long = "datatype", default_value = "valid")]
    pub datatype: DataMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "PARLANCE_DATA", default_value = "data")]
    pub datapath: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Accept a remote model peer on this TCP port.
    #[arg(long)]
    pub port: Option<u16>,
    /// Accept a browser participant on this port (path `/agent`).
    #[arg(long = "ws-port")]
    pub ws_port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Parleys to run; a task session otherwise ends with its epoch.
    #[arg(short = 'n', long = "num-examples")]
    pub num_examples: Option<usize>,
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PeerArgs {
    /// Address of the world to join.
    #[arg(long)]
    pub connect: String,
    /// repeat_label or ir_baseline.
    #[arg(short = 'm', long = "model", default_value = "repeat_label")]
    pub model: String,
    #[arg(long = "model-file", default_value = "ir_baseline.stats")]
    pub model_file: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct HumanArgs {
    /// Accept the participant through the browser gateway on this port.
    #[arg(long = "ws-port", default_value_t = 8081)]
    pub ws_port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Replay the participant's replies from a file, one per line, instead
    /// of waiting for a browser.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Seconds to wait for the participant.
    #[arg(long = "human-timeout", default_value_t = 600.0)]
    pub human_timeout: f64,
    /// Directory for the collected records.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CollectArgs {
    /// Context paragraphs, separated by blank lines.
    #[arg(long = "task-context")]
    pub task_context: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[command(flatten)]
    pub human: HumanArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateHumanArgs {
    #[arg(long = "task", short = 't')]
    pub task: String,
    #[arg(long = "datatype", default_value = "valid")]
    pub datatype: DataMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "PARLANCE_DATA", default_value = "data")]
    pub datapath: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Episodes to rate.
    #[arg(short = 'n', long = "episodes", default_value_t = 1)]
    pub episodes: usize,
    #[command(flatten)]
    pub human: HumanArgs,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Tasks to install, e.g. `babi,squad`.
    #[arg(short = 't', long = "task")]
    pub task: String,
    #[arg(long, env = "PARLANCE_DATA", default_value = "data")]
    pub datapath: PathBuf,
    /// Rebuild even when the task is already installed.
    #[arg(long)]
    pub force: bool,
    /// Only re-hash installed files against their recorded checksums.
    #[arg(long)]
    pub verify: bool,
}

/// Accepts the single-dash `-dt` spelling used by older harnesses.
pub fn normalize_args<I: IntoIterator<Item = OsString>>(args: I) -> Vec<OsString> {
    args.into_iter()
        .map(|a| match a.to_str() {
            Some("-dt") => OsString::from("--datatype"),
            Some(s) if s.starts_with("-dt=") => OsString::from(format!("--datatype={}", &s[4..])),
            _ => a,
        })
        .collect()
}
