//! On-disk layout: one directory per video.
//!
//! ```text
//! <store>/<video_id>/asset.json     parsed transcript and frames
//! <store>/<video_id>/index.bin      embedding index
//! <store>/<video_id>/summary.json   cached global summary
//! <store>/<video_id>/traces/        question traces
//! ```
//!
//! Deleting a file invalidates that cache.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vidqa_core::summary::{GlobalSummary, SUMMARY_SCHEMA_VERSION};
use vidqa_core::{EmbeddingIndex, VideoAsset};

use crate::index_file::{self, IndexFileError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("invalid video id `{0}`: use letters, digits, `-`, `_` or `.`")]
    InvalidVideoId(String),
    #[error("video `{0}` is not ingested")]
    NotIngested(String),
    #[error("summary file {path} has schema version {found}, expected {expected}")]
    SummaryVersion { path: String, found: u32, expected: u32 },
    #[error(transparent)]
    Index(#[from] IndexFileError),
}

#[derive(Serialize, Deserialize)]
struct SummaryFile {
    schema_version: u32,
    summary: GlobalSummary,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Exclusive per-video lock, released on drop.
pub struct VideoLock {
    _file: File,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

pub fn check_video_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidVideoId(id.to_string()))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| StoreError::Json { path: path.display().to_string(), source })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| StoreError::Json { path: path.display().to_string(), source })
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Store { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn video_dir(&self, video_id: &str) -> PathBuf {
        self.root.join(video_id)
    }

    pub fn asset_path(&self, video_id: &str) -> PathBuf {
        self.video_dir(video_id).join("asset.json")
    }

    pub fn index_path(&self, video_id: &str) -> PathBuf {
        self.video_dir(video_id).join("index.bin")
    }

    pub fn summary_path(&self, video_id: &str) -> PathBuf {
        self.video_dir(video_id).join("summary.json")
    }

    pub fn traces_dir(&self, video_id: &str) -> PathBuf {
        self.video_dir(video_id).join("traces")
    }

    /// Asset and index both present.
    pub fn is_ingested(&self, video_id: &str) -> bool {
        self.asset_path(video_id).is_file() && self.index_path(video_id).is_file()
    }

    /// Blocks until this process holds the video's lock.
    pub fn lock(&self, video_id: &str) -> Result<VideoLock, StoreError> {
        check_video_id(video_id)?;
        let dir = self.video_dir(video_id);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(".lock");
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(&path).map_err(io_err(&path))?;
        file.lock().map_err(io_err(&path))?;
        Ok(VideoLock { _file: file })
    }

    /// Writes asset and index, index last so a half-written ingest reads as absent.
    pub fn save_ingest(&self, asset: &VideoAsset, index: &EmbeddingIndex) -> Result<(), StoreError> {
        check_video_id(&asset.video_id)?;
        let dir = self.video_dir(&asset.video_id);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let _ = std::fs::remove_file(self.index_path(&asset.video_id));
        let _ = std::fs::remove_file(self.summary_path(&asset.video_id));
        write_json(&self.asset_path(&asset.video_id), asset)?;
        index_file::save(index, &self.index_path(&asset.video_id))?;
        Ok(())
    }

    pub fn load_asset(&self, video_id: &str) -> Result<VideoAsset, StoreError> {
        check_video_id(video_id)?;
        if !self.is_ingested(video_id) {
            return Err(StoreError::NotIngested(video_id.to_string()));
        }
        read_json(&self.asset_path(video_id))
    }

    pub fn load_index(&self, video_id: &str) -> Result<EmbeddingIndex, StoreError> {
        check_video_id(video_id)?;
        if !self.is_ingested(video_id) {
            return Err(StoreError::NotIngested(video_id.to_string()));
        }
        Ok(index_file::load(&self.index_path(video_id))?)
    }

    pub fn load_summary(&self, video_id: &str) -> Result<Option<GlobalSummary>, StoreError> {
        check_video_id(video_id)?;
        let path = self.summary_path(video_id);
        if !path.is_file() {
            return Ok(None);
        }
        let file: SummaryFile = read_json(&path)?;
        if file.schema_version != SUMMARY_SCHEMA_VERSION {
            return Err(StoreError::SummaryVersion {
                path: path.display().to_string(),
                found: file.schema_version,
                expected: SUMMARY_SCHEMA_VERSION,
            });
        }
        Ok(Some(file.summary))
    }

    pub fn save_summary(&self, summary: &GlobalSummary) -> Result<(), StoreError> {
        check_video_id(&summary.video_id)?;
        let file = SummaryFile { schema_version: SUMMARY_SCHEMA_VERSION, summary: summary.clone() };
        write_json(&self.summary_path(&summary.video_id), &file)
    }

    /// Writes line-delimited JSON records.
    pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut out = String::new();
        for r in records {
            out.push_str(
                &serde_json::to_string(r).map_err(|source| StoreError::Json { path: path.display().to_string(), source })?,
            );
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn video_ids_are_path_safe() {
        for ok in ["v1", "yogi_bear-02.mkv"] {
            assert!(check_video_id(ok).is_ok());
        }
        for bad in ["", "..", "../x", "a/b", ".hidden", "sp ace"] {
            assert!(check_video_id(bad).is_err(), "{bad}");
        }
    }
}
