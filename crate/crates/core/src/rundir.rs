//! On-disk state of a training run.
//!
//! ```text
//! <out>/config.json             configuration snapshot
//! <out>/checkpoints/iter-NNNNN.json
//! <out>/history.jsonl           one StepRecord per completed iteration
//! <out>/pending.json            present only while a step awaits ratings
//! ```
//!
//! Every JSON file is written to a temporary sibling and renamed into place.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{GeneratorArch, GeneratorError, GeneratorParams};
use crate::nes::PairedQuery;
use crate::trainer::StepRecord;

#[derive(Debug, Error)]
pub enum RunDirError {
    #[error("{path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("checkpoint {path}")]
    Params { path: PathBuf, source: GeneratorError },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunDirError + '_ {
    move |source| RunDirError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunDirError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunDirError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|source| RunDirError::Json { path: path.to_path_buf(), source })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, RunDirError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| RunDirError::Json { path: path.to_path_buf(), source })
}

/// Serialized generator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: GeneratorArch,
    pub flat_params: Vec<f64>,
    pub seed: u64,
    pub iteration: usize,
}

impl Checkpoint {
    pub fn new(params: &GeneratorParams, seed: u64, iteration: usize) -> Self {
        Checkpoint { arch: params.arch().clone(), flat_params: params.to_flat(), seed, iteration }
    }

    pub fn params(&self) -> Result<GeneratorParams, GeneratorError> {
        GeneratorParams::from_flat(&self.arch, &self.flat_params)
    }

    pub fn load(path: &Path) -> Result<Self, RunDirError> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), RunDirError> {
        write_json(path, self)
    }
}

/// Why a run stopped before its last iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum PauseReason {
    AwaitingRatings { batch_id: String, complete_fraction: f64 },
    Unreachable { detail: String },
}

/// State persisted while a step waits on its evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingStep {
    /// Zero-based step index; the step turns checkpoint `iteration` into `iteration + 1`.
    pub iteration: usize,
    #[serde(flatten)]
    pub reason: PauseReason,
    pub queries: Vec<PairedQuery>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, RunDirError> {
        let dir = RunDir { root: root.to_path_buf() };
        fs::create_dir_all(dir.checkpoint_dir()).map_err(io_err(root))?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn history_path(&self) -> PathBuf {
        self.root.join("history.jsonl")
    }

    pub fn pending_path(&self) -> PathBuf {
        self.root.join("pending.json")
    }

    fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint_path(&self, iteration: usize) -> PathBuf {
        self.checkpoint_dir().join(format!("iter-{iteration:05}.json"))
    }

    /// Highest-numbered checkpoint, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<Checkpoint>, RunDirError> {
        let dir = self.checkpoint_dir();
        let mut best: Option<usize> = None;
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let name = entry.map_err(io_err(&dir))?.file_name();
            let name = name.to_string_lossy();
            if let Some(n) = name.strip_prefix("iter-").and_then(|s| s.strip_suffix(".json")) {
                if let Ok(n) = n.parse::<usize>() {
                    best = best.max(Some(n));
                }
            }
        }
        best.map(|n| Checkpoint::load(&self.checkpoint_path(n))).transpose()
    }

    pub fn save_checkpoint(&self, checkpoint: &Checkpoint) -> Result<(), RunDirError> {
        checkpoint.save(&self.checkpoint_path(checkpoint.iteration))
    }

    pub fn read_history(&self) -> Result<Vec<StepRecord>, RunDirError> {
        let path = self.history_path();
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(RunDirError::Io { path, source: e }),
        };
        let mut records = Vec::new();
        for line in io::BufReader::new(file).lines() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line).map_err(|source| RunDirError::Json { path: path.clone(), source })?,
            );
        }
        Ok(records)
    }

    /// Rewrites the whole history file.
    pub fn write_history(&self, records: &[StepRecord]) -> Result<(), RunDirError> {
        let path = self.history_path();
        let mut bytes = Vec::new();
        for r in records {
            serde_json::to_writer(&mut bytes, r).map_err(|source| RunDirError::Json { path: path.clone(), source })?;
            bytes.push(b'\n');
        }
        write_atomic(&path, &bytes)
    }

    pub fn write_pending(&self, pending: &PendingStep) -> Result<(), RunDirError> {
        write_json(&self.pending_path(), pending)
    }

    pub fn read_pending(&self) -> Result<Option<PendingStep>, RunDirError> {
        let path = self.pending_path();
        if path.exists() {
            read_json(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn clear_pending(&self) -> Result<(), RunDirError> {
        let path = self.pending_path();
        match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(RunDirError::Io { path, source: e }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let arch = GeneratorArch::default();
        let params = GeneratorParams::init_random(&arch, 17, 1.3).unwrap();
        let ck = Checkpoint::new(&params, 17, 3);
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params().unwrap(), params);
    }

    #[test]
    fn latest_checkpoint_picks_highest() {
        let dir = tempfile::tempdir().unwrap();
        let rd = RunDir::create(dir.path()).unwrap();
        assert!(rd.latest_checkpoint().unwrap().is_none());
        let params = GeneratorParams::init_random(&GeneratorArch::default(), 1, 1.0).unwrap();
        for it in [0, 2, 1] {
            rd.save_checkpoint(&Checkpoint::new(&params, 1, it)).unwrap();
        }
        assert_eq!(rd.latest_checkpoint().unwrap().unwrap().iteration, 2);
        assert!(!dir.path().join("checkpoints/iter-00002.json.tmp").exists());
    }
}
