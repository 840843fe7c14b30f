//! Task registry, the task-selection grammar, dataset acquisition and
//! loading.
//!
//! A task expression is a comma-separated list. Each item is either a task
//! name with an optional colon-separated subtask path (`babi:Task1k:4`) or a
//! category expansion (`#qa`, `#all`).

pub mod build;
pub mod data;
pub mod parsers;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::episode::Split;

pub use build::{build_task, verify_task, BuildOutcome, Fetcher, HttpFetcher};
pub use data::{load_teacher, DataSource, LoadOptions, MixPolicy};
pub use parsers::{parse_babi, parse_fbdialog, parse_squad, ParseError};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("empty task expression")]
    EmptySpec,
    #[error("empty item in task expression {0:?}")]
    EmptyToken(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("category {0:?} expands to no registered task")]
    EmptyExpansion(String),
    #[error("invalid task descriptor {name:?}: {reason}")]
    InvalidDescriptor { name: String, reason: String },
    #[error("unknown subtask {subtask:?} for task {task:?}")]
    UnknownSubtask { task: String, subtask: String },
    #[error("no {split} data for {task}")]
    MissingData { task: String, split: Split },
    #[error("{file}: {source}")]
    Parse {
        file: String,
        #[source]
        source: ParseError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checksum mismatch for {file}: expected {expected}, got {actual}")]
    ChecksumMismatch { file: String, expected: String, actual: String },
    #[error("no pinned sha256 for {file}; add `<sha256>  {file}` to {pins}")]
    UnpinnedChecksum { file: String, pins: PathBuf },
    #[error("download of {url} failed: {reason}")]
    Network { url: String, reason: String },
    #[error("task {0:?} is not built; run with --download first")]
    NotBuilt(String),
}

/// The five task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    QA,
    Cloze,
    Goal,
    ChitChat,
    Visual,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::QA, Category::Cloze, Category::Goal, Category::ChitChat, Category::Visual];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::QA => "qa",
            Category::Cloze => "cloze",
            Category::Goal => "goal",
            Category::ChitChat => "chitchat",
            Category::Visual => "visual",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "qa" => Ok(Category::QA),
            "cloze" => Ok(Category::Cloze),
            "goal" => Ok(Category::Goal),
            "chitchat" => Ok(Category::ChitChat),
            "visual" => Ok(Category::Visual),
            _ => Err(TaskError::UnknownCategory(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParserKind {
    Babi,
    FbDialog,
    Squad,
}

/// A file fetched on first use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteFile {
    pub url: String,
    pub filename: String,
    /// Hex sha256. When `None` the pin must come from the data root's
    /// `checksums.sha256` file before anything is downloaded.
    pub sha256: Option<String>,
    /// Gzipped tarball to be unpacked next to the archive.
    pub unpack: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDescriptor {
    pub name: String,
    pub categories: BTreeSet<Category>,
    pub sources: Vec<RemoteFile>,
    pub parser: ParserKind,
    pub splits: Vec<Split>,
    pub version: u32,
}

impl TaskDescriptor {
    pub fn new(name: &str, categories: &[Category], parser: ParserKind) -> Self {
        TaskDescriptor {
            name: name.to_string(),
            categories: categories.iter().copied().collect(),
            sources: Vec::new(),
            parser,
            splits: Split::ALL.to_vec(),
            version: 1,
        }
    }

    pub fn with_source(mut self, file: RemoteFile) -> Self {
        self.sources.push(file);
        self
    }
}

/// Registered tasks in registration order, plus name aliases.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    tasks: Vec<TaskDescriptor>,
    aliases: BTreeMap<String, String>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// bAbI, SQuAD and the local fbdialog loader. `fbdialog_fixture` is an
    /// alias for bare `fbdialog`, which resolves to the bundled sample.
    pub fn builtin() -> Self {
        let mut r = Registry::empty();
        r.register(TaskDescriptor::new("babi", &[Category::QA], ParserKind::Babi).with_source(RemoteFile {
            url: "http://www.thespermwhale.com/jaseweston/babi/tasks_1-20_v1-2.tar.gz".into(),
            filename: "tasks_1-20_v1-2.tar.gz".into(),
            sha256: None,
            unpack: true,
        }))
        .expect("builtin babi");
        r.register(
            TaskDescriptor::new("squad", &[Category::QA], ParserKind::Squad)
                .with_source(RemoteFile {
                    url: "https://rajpurkar.github.io/SQuAD-explorer/dataset/train-v1.1.json".into(),
                    filename: "train-v1.1.json".into(),
                    sha256: None,
                    unpack: false,
                })
                .with_source(RemoteFile {
                    url: "https://rajpurkar.github.io/SQuAD-explorer/dataset/dev-v1.1.json".into(),
                    filename: "dev-v1.1.json".into(),
                    sha256: None,
                    unpack: false,
                }),
        )
        .expect("builtin squad");
        r.register(TaskDescriptor::new("fbdialog", &[Category::ChitChat], ParserKind::FbDialog))
            .expect("builtin fbdialog");
        r.alias("fbdialog_fixture", "fbdialog").expect("builtin alias");
        r
    }

    pub fn register(&mut self, d: TaskDescriptor) -> Result<(), TaskError> {
        let invalid = |reason: &str| TaskError::InvalidDescriptor { name: d.name.clone(), reason: reason.into() };
        if d.name.is_empty() || d.name.contains([':', ',', '#']) || d.name.chars().any(char::is_whitespace) {
            return Err(invalid("name must be non-empty without ':', ',', '#' or whitespace"));
        }
        if d.categories.is_empty() {
            return Err(invalid("at least one category is required"));
        }
        if self.get(&d.name).is_some() {
            return Err(invalid("already registered"));
        }
        self.tasks.push(d);
        Ok(())
    }

    pub fn alias(&mut self, alias: &str, target: &str) -> Result<(), TaskError> {
        if self.tasks.iter().all(|t| t.name != target) {
            return Err(TaskError::UnknownTask(target.to_string()));
        }
        self.aliases.insert(alias.to_string(), target.to_string());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TaskDescriptor> {
        let name = self.aliases.get(name).map(String::as_str).unwrap_or(name);
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn tasks(&self) -> &[TaskDescriptor] {
        &self.tasks
    }

    pub fn in_category(&self, cat: Category) -> impl Iterator<Item = &TaskDescriptor> {
        self.tasks.iter().filter(move |t| t.categories.contains(&cat))
    }
}

/// One selected task with its subtask path.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaskEntry {
    pub task: String,
    pub subtask: Vec<String>,
}

impl TaskEntry {
    pub fn new(task: &str, subtask: &[&str]) -> Self {
        TaskEntry { task: task.to_string(), subtask: subtask.iter().map(|s| s.to_string()).collect() }
    }

    /// `task[:sub[:sub...]]`
    pub fn id(&self) -> String {
        std::iter::once(self.task.as_str()).chain(self.subtask.iter().map(String::as_str)).collect::<Vec<_>>().join(":")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub entries: Vec<TaskEntry>,
    pub raw: String,
}

impl TaskSpec {
    pub fn parse(s: &str, registry: &Registry) -> Result<TaskSpec, TaskError> {
        if s.trim().is_empty() {
            return Err(TaskError::EmptySpec);
        }
        let mut entries: Vec<TaskEntry> = Vec::new();
        let mut push = |e: TaskEntry| {
            if !entries.contains(&e) {
                entries.push(e);
            }
        };
        for token in s.split(',').map(str::trim) {
            if token.is_empty() {
                return Err(TaskError::EmptyToken(s.to_string()));
            }
            if let Some(cat) = token.strip_prefix('#') {
                let matched: Vec<&TaskDescriptor> = if cat.eq_ignore_ascii_case("all") {
                    registry.tasks().iter().collect()
                } else {
                    registry.in_category(cat.parse()?).collect()
                };
                if matched.is_empty() {
                    return Err(TaskError::EmptyExpansion(token.to_string()));
                }
                for d in matched {
                    push(TaskEntry { task: d.name.clone(), subtask: Vec::new() });
                }
                continue;
            }
            let mut parts = token.split(':');
            let name = parts.next().unwrap_or_default();
            let d = registry.get(name).ok_or_else(|| TaskError::UnknownTask(name.to_string()))?;
            push(TaskEntry { task: d.name.clone(), subtask: parts.map(str::to_string).collect() });
        }
        Ok(TaskSpec { entries, raw: s.to_string() })
    }
}
