//! Frame manifests and the external frame extractor.
//!
//! A manifest is line-delimited JSON, one frame per line:
//! `{"timestamp_ms": 2000, "image_ref": "frames/000001.jpg"}`. Image refs
//! are opaque strings handed to the backend unchanged.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;
use vidqa_core::transcript::{frames_from_records, sample_timestamps};
use vidqa_core::{FrameRecord, Millis};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: unreadable record: {reason}")]
    UnreadableRecord { line: usize, reason: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: duplicate timestamp {timestamp}")]
    DuplicateTimestamp { line: usize, timestamp: Millis },
    #[error("frame extractor failed: {0}")]
    Extractor(String),
}

#[derive(Deserialize)]
struct RawFrame {
    timestamp_ms: Option<Value>,
    image_ref: Option<Value>,
}

/// Parses manifest text into frames ordered by timestamp.
pub fn parse_manifest(text: &str) -> Result<Vec<FrameRecord>, ManifestError> {
    let mut records: Vec<(Millis, String)> = Vec::new();
    let mut seen = std::collections::BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawFrame = serde_json::from_str(line)
            .map_err(|e| ManifestError::UnreadableRecord { line: line_no, reason: e.to_string() })?;
        let ts = match raw.timestamp_ms {
            None | Some(Value::Null) => return Err(ManifestError::MissingField { line: line_no, field: "timestamp_ms" }),
            Some(v) => v.as_u64().map(Millis).ok_or_else(|| ManifestError::UnreadableRecord {
                line: line_no,
                reason: format!("timestamp_ms must be a non-negative integer, got {v}"),
            })?,
        };
        let image_ref = match raw.image_ref {
            Some(Value::String(s)) if !s.trim().is_empty() => s,
            None | Some(Value::Null) => return Err(ManifestError::MissingField { line: line_no, field: "image_ref" }),
            Some(v) => {
                return Err(ManifestError::UnreadableRecord {
                    line: line_no,
                    reason: format!("image_ref must be a non-empty string, got {v}"),
                })
            }
        };
        if seen.insert(ts, line_no).is_some() {
            return Err(ManifestError::DuplicateTimestamp { line: line_no, timestamp: ts });
        }
        records.push((ts, image_ref));
    }
    frames_from_records(records).map_err(|e| ManifestError::UnreadableRecord { line: 0, reason: e.to_string() })
}

pub fn load_manifest(path: &Path) -> Result<Vec<FrameRecord>, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
    parse_manifest(&text)
}

/// Renders the extractor command. Placeholders: `{video}`, `{interval_s}`, `{out_dir}`.
pub fn render_extractor(template: &str, video: &Path, interval: Millis, out_dir: &Path) -> String {
    template
        .replace("{video}", &shell_quote(&video.display().to_string()))
        .replace("{interval_s}", &format!("{}", interval.as_secs_f64()))
        .replace("{out_dir}", &shell_quote(&out_dir.display().to_string()))
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Runs the extractor and reads its frames.
///
/// The command should write `out_dir/manifest.jsonl`. If it only writes
/// image files, they are taken in name order at `k * interval`.
pub fn extract_frames(
    template: &str,
    video: &Path,
    interval: Millis,
    out_dir: &Path,
) -> Result<Vec<FrameRecord>, ManifestError> {
    if !video.exists() {
        return Err(ManifestError::Extractor(format!("video {} does not exist", video.display())));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| ManifestError::Io { path: out_dir.display().to_string(), source })?;
    let command = render_extractor(template, video, interval, out_dir);
    let output = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .output()
        .map_err(|e| ManifestError::Extractor(format!("{command}: {e}")))?;
    if !output.status.success() {
        return Err(ManifestError::Extractor(format!(
            "`{command}` exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let manifest = out_dir.join(MANIFEST_NAME);
    if manifest.exists() {
        return load_manifest(&manifest);
    }
    let mut images: Vec<PathBuf> = std::fs::read_dir(out_dir)
        .map_err(|source| ManifestError::Io { path: out_dir.display().to_string(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("jpg" | "jpeg" | "png" | "webp")))
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(ManifestError::Extractor(format!("`{command}` produced no frames in {}", out_dir.display())));
    }
    let last = Millis(interval.as_millis() * (images.len() as u64 - 1));
    let stamps = sample_timestamps(last, interval).map_err(|e| ManifestError::Extractor(e.to_string()))?;
    frames_from_records(stamps.into_iter().zip(images.iter().map(|p| p.display().to_string())).collect())
        .map_err(|e| ManifestError::Extractor(e.to_string()))
}
