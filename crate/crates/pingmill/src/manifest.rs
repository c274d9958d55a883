//! Run manifest: config snapshot, input digests, row counts, stage timings.
//!
//! Written for every run so results can be traced back to their exact
//! inputs and settings. Timings make the manifest the one output file that
//! differs between otherwise identical runs.

use std::io::Read;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RowCounts {
    pub rows_read: u64,
    pub rows_emitted: u64,
    pub rows_rejected: u64,
    pub rows_filtered_out: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub worker_count: usize,
    pub inputs: Vec<InputDigest>,
    pub counts: RowCounts,
    pub stages: Vec<StageTime>,
    pub outputs: Vec<String>,
    pub config: toml::Value,
}

impl RunManifest {
    pub fn new(subcommand: &str, worker_count: usize, config_snapshot: toml::Value) -> Self {
        RunManifest {
            tool: "pingmill".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            worker_count,
            inputs: Vec::new(),
            counts: RowCounts::default(),
            stages: Vec::new(),
            outputs: Vec::new(),
            config: config_snapshot,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let (sha256, bytes) = sha256_file(path)?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            bytes,
            sha256,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
        self.outputs.sort();
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

/// Wall-clock laps for the manifest's per-stage timings.
pub struct StageClock {
    last: Instant,
    entries: Vec<StageTime>,
}

impl StageClock {
    pub fn start() -> Self {
        StageClock {
            last: Instant::now(),
            entries: Vec::new(),
        }
    }

    pub fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.entries.push(StageTime {
            stage: stage.to_string(),
            seconds: now.duration_since(self.last).as_secs_f64(),
        });
        self.last = now;
    }

    pub fn into_entries(self) -> Vec<StageTime> {
        self.entries
    }
}
