//! First-use dataset acquisition.
//!
//! Layout: `<data_root>/<task>/` holds the downloaded files (archives are
//! unpacked beside themselves) and a `.built` marker listing the version and
//! the verified checksums. Files are assembled in a private staging
//! directory and moved into place with one rename, so a task directory with
//! a marker is always complete.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use flate2::read::GzDecoder;
use sha2::{Digest, Sha256};

use super::{RemoteFile, TaskDescriptor, TaskError};

pub const MARKER: &str = ".built";
/// Checksum pins in `sha256sum` format, read from the data root.
pub const PINS_FILE: &str = "checksums.sha256";

pub trait Fetcher: Sync {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, TaskError>;
}

/// Blocking HTTP(S) downloads.
#[derive(Debug, Default, Clone, Copy)]
pub struct HttpFetcher;

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, TaskError> {
        let net = |e: ureq::Error| TaskError::Network { url: url.to_string(), reason: e.to_string() };
        let mut resp = ureq::get(url).call().map_err(net)?;
        resp.body_mut().with_config().limit(u64::MAX).read_to_vec().map_err(net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildOutcome {
    Built,
    AlreadyBuilt,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TaskError + '_ {
    move |source| TaskError::Io { path: path.to_path_buf(), source }
}

fn read_pins(data_root: &Path) -> Result<Vec<(String, String)>, TaskError> {
    let path = data_root.join(PINS_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&path)(e)),
    };
    Ok(text
        .lines()
        .filter_map(|line| {
            let line = line.trim();
            let (hash, file) = line.split_once(char::is_whitespace)?;
            let file = file.trim_start().trim_start_matches('*');
            Some((file.to_string(), hash.to_ascii_lowercase()))
        })
        .collect())
}

fn pinned_checksum(file: &RemoteFile, pins: &[(String, String)], data_root: &Path) -> Result<String, TaskError> {
    if let Some(h) = &file.sha256 {
        return Ok(h.to_ascii_lowercase());
    }
    pins.iter()
        .find(|(name, _)| *name == file.filename)
        .map(|(_, h)| h.clone())
        .ok_or_else(|| TaskError::UnpinnedChecksum { file: file.filename.clone(), pins: data_root.join(PINS_FILE) })
}

fn unique_suffix() -> String {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    format!("{}.{}.{}", std::process::id(), nanos, COUNTER.fetch_add(1, Ordering::Relaxed))
}

pub fn task_dir(d: &TaskDescriptor, data_root: &Path) -> PathBuf {
    data_root.join(&d.name)
}

pub fn is_built(d: &TaskDescriptor, data_root: &Path) -> bool {
    task_dir(d, data_root).join(MARKER).is_file()
}

/// Downloads, verifies and installs a task's files. Idempotent: with the
/// marker present and `force` unset, nothing is fetched. `force` removes the
/// existing marker before rebuilding, so a failed rebuild leaves none.
pub fn build_task(
    d: &TaskDescriptor,
    data_root: &Path,
    fetcher: &dyn Fetcher,
    force: bool,
) -> Result<BuildOutcome, TaskError> {
    let target = task_dir(d, data_root);
    let marker = target.join(MARKER);
    if marker.is_file() {
        if !force {
            return Ok(BuildOutcome::AlreadyBuilt);
        }
        fs::remove_file(&marker).map_err(io_err(&marker))?;
    }

    let pins = read_pins(data_root)?;
    let expected: Vec<String> =
        d.sources.iter().map(|f| pinned_checksum(f, &pins, data_root)).collect::<Result<_, _>>()?;

    let staging_root = data_root.join(".staging");
    fs::create_dir_all(&staging_root).map_err(io_err(&staging_root))?;
    let staging = staging_root.join(format!("{}.{}", d.name, unique_suffix()));
    fs::create_dir(&staging).map_err(io_err(&staging))?;

    let result = stage(d, &staging, &expected, fetcher).and_then(|()| install(&staging, &target, &staging_root, force));
    if staging.exists() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn stage(d: &TaskDescriptor, staging: &Path, expected: &[String], fetcher: &dyn Fetcher) -> Result<(), TaskError> {
    let mut marker = format!("version={}\n", d.version);
    for (file, want) in d.sources.iter().zip(expected) {
        let bytes = fetcher.fetch(&file.url)?;
        let actual = sha256_hex(&bytes);
        if actual != *want {
            return Err(TaskError::ChecksumMismatch { file: file.filename.clone(), expected: want.clone(), actual });
        }
        let path = staging.join(&file.filename);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        if file.unpack {
            tar::Archive::new(GzDecoder::new(bytes.as_slice())).unpack(staging).map_err(io_err(&path))?;
        }
        marker.push_str(&format!("{actual}  {}\n", file.filename));
    }
    let path = staging.join(MARKER);
    fs::write(&path, marker).map_err(io_err(&path))
}

fn install(staging: &Path, target: &Path, staging_root: &Path, force: bool) -> Result<BuildOutcome, TaskError> {
    if target.exists() {
        if target.join(MARKER).is_file() && !force {
            // another builder finished first
            return Ok(BuildOutcome::AlreadyBuilt);
        }
        let old = staging_root.join(format!("old.{}", unique_suffix()));
        fs::rename(target, &old).map_err(io_err(target))?;
        let _ = fs::remove_dir_all(&old);
    }
    match fs::rename(staging, target) {
        Ok(()) => Ok(BuildOutcome::Built),
        Err(_) if target.join(MARKER).is_file() => Ok(BuildOutcome::AlreadyBuilt),
        Err(e) => Err(io_err(target)(e)),
    }
}

/// Re-hashes the installed files against the checksums in the marker.
pub fn verify_task(d: &TaskDescriptor, data_root: &Path) -> Result<(), TaskError> {
    let target = task_dir(d, data_root);
    let marker_path = target.join(MARKER);
    let marker = fs::read_to_string(&marker_path).map_err(|_| TaskError::NotBuilt(d.name.clone()))?;
    for line in marker.lines().filter(|l| !l.starts_with("version=")) {
        let Some((want, file)) = line.split_once("  ") else { continue };
        let path = target.join(file);
        let mut bytes = Vec::new();
        fs::File::open(&path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(&path))?;
        let actual = sha256_hex(&bytes);
        if actual != want {
            return Err(TaskError::ChecksumMismatch { file: file.to_string(), expected: want.to_string(), actual });
        }
    }
    Ok(())
}
