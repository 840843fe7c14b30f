mod args;
mod commands;
mod live;
mod models;

use std::process::ExitCode;

use clap::Parser;
use parlance_bridge::{BridgeError, FrameError, GatewayError};
use parlance_core::agents::AgentError;
use parlance_core::ir::StatsError;
use parlance_core::tasks::{ParseError, TaskError};
use parlance_core::worlds::WorldError;

use args::{normalize_args, Cli, Command};
use models::UsageError;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_REMOTE: u8 = 4;

fn remote_failure(e: &AgentError) -> bool {
    matches!(
        e,
        AgentError::Unavailable { .. } | AgentError::Disconnected(_) | AgentError::Protocol { .. } | AgentError::EndOfSession(_)
    )
}

/// 2 for usage mistakes, 3 for task and data problems, 4 when a remote
/// participant could not be reached or misbehaved, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<BridgeError>() || cause.is::<GatewayError>() || cause.is::<FrameError>() {
            return EXIT_REMOTE;
        }
        if let Some(w) = cause.downcast_ref::<WorldError>() {
            if w.agent_error().is_some_and(remote_failure) {
                return EXIT_REMOTE;
            }
        }
        if cause.downcast_ref::<AgentError>().is_some_and(remote_failure) {
            return EXIT_REMOTE;
        }
        if cause.is::<TaskError>() || cause.is::<ParseError>() || cause.is::<StatsError>() {
            return EXIT_DATA;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse_from(normalize_args(std::env::args_os())) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::DisplayData(a) => commands::display_data(a),
        Command::EvalModel(a) => commands::eval_model(a),
        Command::TrainModel(a) => commands::train_model(a),
        Command::Interactive(a) => live::interactive(a),
        Command::Serve(a) => live::serve(a),
        Command::Peer(a) => live::peer(a),
        Command::Collect(a) => live::collect(a),
        Command::EvaluateHuman(a) => live::evaluate_human(a),
        Command::Build(a) => commands::build(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
