//! Core of a framework for training and evaluating dialog agents: the
//! message format, agents and teachers, worlds, metrics, task loading and
//! an information-retrieval baseline.

pub mod agents;
pub mod episode;
pub mod human;
pub mod ir;
pub mod messages;
pub mod metrics;
pub mod tasks;
pub mod worlds;

pub use agents::{Agent, AgentError, Teacher};
pub use episode::{DataMode, Episode, Split, Turn};
pub use messages::Message;
pub use metrics::MetricsReport;
