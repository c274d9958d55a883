//! Shuffle spill files: length-prefixed binary record frames.
//!
//! During the write phase every upstream partition writes one file per
//! target; at the barrier those pieces are concatenated in upstream order
//! into one file per (stage, target), so downstream row order never depends
//! on worker scheduling. Files live under the engine work dir and are
//! removed when the stage handle drops.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Owns one shuffle stage's directory; deletes it when no longer referenced.
pub struct SpillStage {
    dir: PathBuf,
}

impl SpillStage {
    pub fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(SpillStage { dir })
    }

    pub fn piece_path(&self, upstream: usize, target: usize) -> PathBuf {
        self.dir.join(format!("u{upstream:05}_t{target:05}.spill"))
    }

    pub fn target_path(&self, target: usize) -> PathBuf {
        self.dir.join(format!("part{target:05}.spill"))
    }

    /// Concatenate the per-upstream pieces for `target` (ascending upstream
    /// order) into the final per-target file, deleting the pieces.
    pub fn merge_target(&self, target: usize, upstream_count: usize) -> Result<u64> {
        let out_path = self.target_path(target);
        let mut out = BufWriter::new(File::create(&out_path).map_err(|e| Error::io(&out_path, e))?);
        let mut bytes = 0u64;
        for upstream in 0..upstream_count {
            let piece = self.piece_path(upstream, target);
            if !piece.exists() {
                continue;
            }
            let mut reader = File::open(&piece).map_err(|e| Error::io(&piece, e))?;
            bytes += std::io::copy(&mut reader, &mut out).map_err(|e| Error::io(&piece, e))?;
            fs::remove_file(&piece).map_err(|e| Error::io(&piece, e))?;
        }
        out.flush().map_err(|e| Error::io(&out_path, e))?;
        Ok(bytes)
    }
}

impl Drop for SpillStage {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.dir);
    }
}

/// Append one length-prefixed frame to an in-memory buffer.
pub fn push_frame(payload: &[u8], out: &mut Vec<u8>) {
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
}

/// Append buffered frames to `path`, creating it if needed.
pub fn append_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Stream every frame of a spill file, in file order.
pub fn read_frames(path: &Path, mut visit: impl FnMut(&[u8]) -> Result<()>) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::with_capacity(1 << 16, file);
    let mut len_buf = [0u8; 4];
    let mut payload = Vec::new();
    loop {
        match reader.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(Error::io(path, e)),
        }
        let len = u32::from_le_bytes(len_buf) as usize;
        payload.resize(len, 0);
        reader
            .read_exact(&mut payload)
            .map_err(|e| Error::io(path, e))?;
        visit(&payload)?;
    }
}
