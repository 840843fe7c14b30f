//! Turning a task expression into a teacher.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::agents::{DialogTeacher, MultiTaskTeacher, Teacher};
use crate::episode::{DataMode, Episode, RawEpisodeSet, Split};
use crate::metrics::DEFAULT_HITS_AT;

use super::build::is_built;
use super::parsers::{answer_vocabulary, parse_babi, parse_fbdialog, parse_squad, ParseError};
use super::{ParserKind, Registry, TaskDescriptor, TaskEntry, TaskError, TaskSpec};

pub use crate::agents::MixPolicy;

/// Where task files come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// The small samples compiled into the binary.
    Bundled,
    /// Built task directories under this data root.
    Disk(PathBuf),
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub source: DataSource,
    pub mode: DataMode,
    pub seed: u64,
    pub mix: MixPolicy,
    pub hits_at: Vec<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            source: DataSource::Bundled,
            mode: DataMode::TRAIN,
            seed: 0,
            mix: MixPolicy::Uniform,
            hits_at: DEFAULT_HITS_AT.to_vec(),
        }
    }
}

const BABI_DIR: &str = "tasks_1-20_v1-2";

struct Bundled {
    path: &'static str,
    text: &'static str,
}

macro_rules! bundled {
    ($($path:literal),* $(,)?) => {
        &[$(Bundled { path: $path, text: include_str!(concat!("../../fixtures/", $path)) }),*]
    };
}

static BUNDLED: &[Bundled] = bundled![
    "babi/qa1_train.txt",
    "babi/qa1_valid.txt",
    "babi/qa1_test.txt",
    "babi/qa2_train.txt",
    "babi/qa2_valid.txt",
    "babi/qa2_test.txt",
    "babi/qa4_train.txt",
    "babi/qa4_valid.txt",
    "babi/qa4_test.txt",
    "squad/train-v1.1.json",
    "squad/dev-v1.1.json",
    "fbdialog/train.txt",
    "fbdialog/valid.txt",
    "fbdialog/test.txt",
];

/// Paths of the bundled sample files, relative to the fixture directory.
pub fn bundled_files() -> impl Iterator<Item = (&'static str, &'static str)> {
    BUNDLED.iter().map(|b| (b.path, b.text))
}

fn bundled(path: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|b| b.path == path).map(|b| b.text)
}

/// One loaded task: its teacher id and its episodes per split.
#[derive(Debug, Clone)]
pub struct LoadedTask {
    pub id: String,
    pub episodes: RawEpisodeSet,
}

enum Text {
    Static(&'static str),
    Owned(String),
}

impl Text {
    fn as_str(&self) -> &str {
        match self {
            Text::Static(s) => s,
            Text::Owned(s) => s,
        }
    }
}

fn read_disk(path: &Path) -> Result<Option<Text>, TaskError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(Text::Owned(s))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(TaskError::Io { path: path.to_path_buf(), source }),
    }
}

fn parse_with(kind: ParserKind, text: &str, id: &str, file: &str) -> Result<Vec<Episode>, TaskError> {
    let parsed = match kind {
        ParserKind::Babi => parse_babi(BufReader::new(text.as_bytes()), id),
        ParserKind::FbDialog => parse_fbdialog(BufReader::new(text.as_bytes()), id),
        ParserKind::Squad => parse_squad(text, id),
    };
    parsed.map_err(|source: ParseError| TaskError::Parse { file: file.to_string(), source })
}

fn built_dir(d: &TaskDescriptor, root: &Path) -> Result<PathBuf, TaskError> {
    if !is_built(d, root) {
        return Err(TaskError::NotBuilt(d.name.clone()));
    }
    Ok(super::build::task_dir(d, root))
}

fn babi_subtasks(entry: &TaskEntry, source: &DataSource) -> Result<Vec<(String, u32)>, TaskError> {
    let unknown = || TaskError::UnknownSubtask { task: entry.task.clone(), subtask: entry.subtask.join(":") };
    let (size, nums): (&str, Vec<u32>) = match entry.subtask.as_slice() {
        [] => ("Task1k", (1..=20).collect()),
        [size] => (size.as_str(), (1..=20).collect()),
        [size, n] => (size.as_str(), vec![n.parse().map_err(|_| unknown())?]),
        _ => return Err(unknown()),
    };
    if !matches!(size, "Task1k" | "Task10k") || nums.iter().any(|n| !(1..=20).contains(n)) {
        return Err(unknown());
    }
    let explicit = entry.subtask.len() == 2;
    let mut out = Vec::new();
    for n in nums {
        let available = match source {
            DataSource::Bundled => size == "Task1k" && bundled(&format!("babi/qa{n}_train.txt")).is_some(),
            DataSource::Disk(_) => true,
        };
        if available || explicit {
            out.push((size.to_string(), n));
        }
    }
    Ok(out)
}

fn babi_file(size: &str, n: u32, split: Split) -> String {
    let dir = if size == "Task10k" { "en-valid-10k" } else { "en-valid" };
    format!("{BABI_DIR}/{dir}/qa{n}_{split}.txt")
}

fn load_babi(d: &TaskDescriptor, entry: &TaskEntry, source: &DataSource) -> Result<Vec<LoadedTask>, TaskError> {
    let root = match source {
        DataSource::Disk(root) => Some(built_dir(d, root)?),
        DataSource::Bundled => None,
    };
    let mut tasks = Vec::new();
    for (size, n) in babi_subtasks(entry, source)? {
        let id = format!("babi:{size}:{n}");
        let mut set = RawEpisodeSet::default();
        for split in Split::ALL {
            let (name, text) = match &root {
                None if size == "Task1k" => {
                    let name = format!("babi/qa{n}_{split}.txt");
                    let text = bundled(&name).map(Text::Static);
                    (name, text)
                }
                None => (format!("babi/{size}/qa{n}_{split}.txt"), None),
                Some(dir) => {
                    let path = dir.join(babi_file(&size, n, split));
                    let text = read_disk(&path)?;
                    (path.display().to_string(), text)
                }
            };
            let Some(text) = text else {
                if entry.subtask.len() == 2 {
                    return Err(TaskError::MissingData { task: id, split });
                }
                continue;
            };
            *set.split_mut(split) = parse_with(ParserKind::Babi, text.as_str(), &id, &name)?;
        }
        if Split::ALL.iter().all(|s| set.split(*s).is_empty()) {
            continue;
        }
        let vocab = answer_vocabulary(Split::ALL.iter().flat_map(|s| set.split(*s)));
        for split in Split::ALL {
            for ep in set.split_mut(split) {
                for turn in &mut ep.turns {
                    turn.label_candidates = Some(vocab.clone());
                }
            }
        }
        tasks.push(LoadedTask { id, episodes: set });
    }
    if tasks.is_empty() {
        return Err(TaskError::UnknownSubtask { task: entry.task.clone(), subtask: entry.subtask.join(":") });
    }
    Ok(tasks)
}

fn load_squad(d: &TaskDescriptor, entry: &TaskEntry, source: &DataSource) -> Result<Vec<LoadedTask>, TaskError> {
    if !entry.subtask.is_empty() {
        return Err(TaskError::UnknownSubtask { task: entry.task.clone(), subtask: entry.subtask.join(":") });
    }
    let id = entry.id();
    let mut set = RawEpisodeSet::default();
    for (file, splits) in [("train-v1.1.json", &[Split::Train][..]), ("dev-v1.1.json", &[Split::Valid, Split::Test][..])] {
        let (name, text) = match source {
            DataSource::Bundled => {
                let name = format!("squad/{file}");
                (name.clone(), bundled(&name).map(Text::Static))
            }
            DataSource::Disk(root) => {
                let path = built_dir(d, root)?.join(file);
                (path.display().to_string(), read_disk(&path)?)
            }
        };
        let Some(text) = text else { continue };
        let eps = parse_with(ParserKind::Squad, text.as_str(), &id, &name)?;
        for s in splits {
            *set.split_mut(*s) = eps.clone();
        }
    }
    Ok(vec![LoadedTask { id, episodes: set }])
}

/// Bare `fbdialog` is the bundled sample. `fbdialog:<path>` reads a single
/// file (used for every split) or a directory holding
/// `train.txt`/`valid.txt`/`test.txt`.
fn load_fbdialog(entry: &TaskEntry) -> Result<Vec<LoadedTask>, TaskError> {
    let id = entry.id();
    let mut set = RawEpisodeSet::default();
    if entry.subtask.is_empty() {
        for split in Split::ALL {
            let name = format!("fbdialog/{split}.txt");
            if let Some(text) = bundled(&name) {
                *set.split_mut(split) = parse_with(ParserKind::FbDialog, text, &id, &name)?;
            }
        }
        return Ok(vec![LoadedTask { id, episodes: set }]);
    }
    let path = PathBuf::from(entry.subtask.join(":"));
    if path.is_dir() {
        for split in Split::ALL {
            let file = path.join(format!("{split}.txt"));
            if let Some(text) = read_disk(&file)? {
                *set.split_mut(split) = parse_with(ParserKind::FbDialog, text.as_str(), &id, &file.display().to_string())?;
            }
        }
    } else {
        let text = fs::read_to_string(&path).map_err(|source| TaskError::Io { path: path.clone(), source })?;
        let eps = parse_with(ParserKind::FbDialog, &text, &id, &path.display().to_string())?;
        for split in Split::ALL {
            *set.split_mut(split) = eps.clone();
        }
    }
    Ok(vec![LoadedTask { id, episodes: set }])
}

/// Loads every task named by one entry. bAbI without a full subtask path
/// expands to each available subtask.
pub fn load_entry(entry: &TaskEntry, registry: &Registry, source: &DataSource) -> Result<Vec<LoadedTask>, TaskError> {
    let d = registry.get(&entry.task).ok_or_else(|| TaskError::UnknownTask(entry.task.clone()))?;
    match d.parser {
        ParserKind::Babi => load_babi(d, entry, source),
        ParserKind::Squad => load_squad(d, entry, source),
        ParserKind::FbDialog => load_fbdialog(entry),
    }
}

fn teacher_for(tasks: Vec<LoadedTask>, id: String, opts: &LoadOptions) -> Result<Box<dyn Teacher>, TaskError> {
    let split = opts.mode.split();
    let mut subs: Vec<Box<dyn Teacher>> = Vec::new();
    let mut missing = None;
    for t in tasks {
        let eps = t.episodes.split(split).to_vec();
        if eps.is_empty() {
            missing.get_or_insert(t.id);
            continue;
        }
        subs.push(Box::new(DialogTeacher::new(t.id, eps, opts.mode, opts.seed).with_hits_at(&opts.hits_at)));
    }
    match (subs.len(), missing) {
        (0, Some(task)) => Err(TaskError::MissingData { task, split }),
        (0, None) => Err(TaskError::MissingData { task: id, split }),
        (1, _) => Ok(subs.pop().expect("one teacher")),
        _ => Ok(Box::new(MultiTaskTeacher::new(id, subs, opts.mode.ordered(), opts.mix, opts.seed))),
    }
}

/// Builds the teacher for a task expression. Several entries are mixed by
/// a [`MultiTaskTeacher`]; an entry that expands to several subtasks (bare
/// `babi`) is itself a multitask teacher, so tasks are mixed at the level
/// they were named.
pub fn load_teacher(spec: &TaskSpec, registry: &Registry, opts: &LoadOptions) -> Result<Box<dyn Teacher>, TaskError> {
    let mut teachers: Vec<Box<dyn Teacher>> = Vec::new();
    for entry in &spec.entries {
        let tasks = load_entry(entry, registry, &opts.source)?;
        teachers.push(teacher_for(tasks, entry.id(), opts)?);
    }
    if teachers.len() == 1 {
        return Ok(teachers.pop().expect("one teacher"));
    }
    Ok(Box::new(MultiTaskTeacher::new(spec.raw.clone(), teachers, opts.mode.ordered(), opts.mix, opts.seed)))
}
