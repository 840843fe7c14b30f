use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use parlance_bridge::{BridgeError, RemoteListener};
use parlance_core::agents::{Agent, ConcurrentAgent, RepeatLabelAgent, SharedAgent};
use parlance_core::ir::{IrBaseline, TermStats};

use crate::args::ModelArgs;

/// A command-line mistake that clap cannot see, such as an unknown model.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelKind {
    RepeatLabel,
    IrBaseline,
    /// Listen here and wait for a peer.
    Remote(String),
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<ModelKind> {
        match s {
            "repeat_label" | "repeat-label" => Ok(ModelKind::RepeatLabel),
            "ir_baseline" | "ir-baseline" => Ok(ModelKind::IrBaseline),
            _ => match s.strip_prefix("remote:") {
                Some(addr) if !addr.is_empty() => Ok(ModelKind::Remote(addr.to_string())),
                _ => Err(usage(format!("unknown model {s:?} (expected repeat_label, ir_baseline or remote:<address>)"))),
            },
        }
    }
}

/// A model ready to play. Local models can be shared between threads.
pub enum Model {
    Local { agent: Arc<dyn ConcurrentAgent>, ir: Option<Arc<IrBaseline>> },
    /// Taken by the first world that plays it.
    Remote(Option<Box<dyn Agent>>),
}

impl Model {
    pub fn repeat_label() -> Model {
        Model::Local { agent: Arc::new(RepeatLabelAgent::new()), ir: None }
    }

    pub fn ir(stats: TermStats) -> Model {
        let ir = Arc::new(IrBaseline::new(stats));
        Model::Local { agent: ir.clone(), ir: Some(ir) }
    }

    /// A per-world handle. Local models hand out a fresh adapter each time;
    /// a remote model can only be taken once.
    pub fn agent(&mut self) -> Result<Box<dyn Agent>> {
        match self {
            Model::Local { agent, .. } => Ok(Box::new(SharedAgent::new(agent.clone()))),
            Model::Remote(slot) => slot.take().ok_or_else(|| usage("the remote peer's session was already used")),
        }
    }

    pub fn remote(agent: Box<dyn Agent>) -> Model {
        Model::Remote(Some(agent))
    }

    pub fn shared(&self) -> Option<Arc<dyn ConcurrentAgent>> {
        match self {
            Model::Local { agent, .. } => Some(agent.clone()),
            Model::Remote(_) => None,
        }
    }

    pub fn ir_handle(&self) -> Option<&Arc<IrBaseline>> {
        match self {
            Model::Local { ir, .. } => ir.as_ref(),
            Model::Remote(_) => None,
        }
    }
}

pub fn load_stats(path: &Path) -> Result<TermStats> {
    TermStats::load(path).with_context(|| format!("cannot read term statistics from {}", path.display()))
}

/// Stats from `path` when it exists, empty otherwise.
pub fn stats_or_empty(path: &Path) -> Result<TermStats> {
    if path.exists() {
        load_stats(path)
    } else {
        Ok(TermStats::new())
    }
}

pub fn timeout(args: &ModelArgs) -> Result<Duration> {
    Duration::try_from_secs_f64(args.timeout).map_err(|_| usage(format!("bad timeout {}", args.timeout)))
}

/// Binds `addr` and waits for one peer to join.
pub fn accept_remote(addr: &str, wait: Duration) -> Result<Box<dyn Agent>> {
    let listener =
        RemoteListener::bind(addr).map_err(BridgeError::from).with_context(|| format!("cannot listen on {addr}"))?;
    eprintln!("waiting for a peer on tcp://{}", listener.local_addr()?);
    let agent = listener.accept_agent(wait)?.with_timeout(wait);
    eprintln!("peer {} joined ({})", agent.id(), agent.session());
    Ok(Box::new(agent))
}
