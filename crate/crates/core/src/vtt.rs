//! WEBVTT reading and writing.
//!
//! Supports the subset needed for speech transcripts: the `WEBVTT` header
//! block, cue blocks with optional identifiers and settings, and `NOTE`,
//! `STYLE` and `REGION` blocks (discarded). Cue payload markup is stripped,
//! character references are decoded, and payload lines are joined with
//! single spaces.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use thiserror::Error;

use crate::time::Millis;
use crate::transcript::TranscriptSegment;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VttError {
    #[error("first non-blank line is not a WEBVTT header")]
    MissingHeader,
    #[error("line {line}: malformed cue timing `{found}`")]
    MalformedTimestamp { line: usize, found: String },
    #[error("line {line}: cue end {end} is not after start {start}")]
    NonMonotonicCues { line: usize, start: Millis, end: Millis },
}

/// Parses a WEBVTT document into segments sorted by start time.
///
/// Cues whose payload is empty after markup removal are dropped. Overlapping
/// cues are kept. Line numbers in errors are 1-based.
pub fn parse_webvtt(source: &str) -> Result<Vec<TranscriptSegment>, VttError> {
    let source = source.strip_prefix('\u{feff}').unwrap_or(source);
    let normalized;
    let source = if source.contains('\r') {
        normalized = source.replace("\r\n", "\n").replace('\r', "\n");
        normalized.as_str()
    } else {
        source
    };
    let lines: Vec<&str> = source.split('\n').collect();

    let mut pos = lines.iter().position(|l| !l.trim().is_empty()).ok_or(VttError::MissingHeader)?;
    if !is_header(lines[pos]) {
        return Err(VttError::MissingHeader);
    }
    // header block runs to the first blank line
    while pos < lines.len() && !lines[pos].trim().is_empty() {
        pos += 1;
    }

    let mut cues: Vec<TranscriptSegment> = Vec::new();
    while pos < lines.len() {
        while pos < lines.len() && lines[pos].trim().is_empty() {
            pos += 1;
        }
        let block_start = pos;
        while pos < lines.len() && !lines[pos].trim().is_empty() {
            pos += 1;
        }
        if block_start == pos {
            break;
        }
        if let Some(seg) = parse_block(&lines[block_start..pos], block_start + 1)? {
            cues.push(seg);
        }
    }

    cues.sort_by_key(|c| c.start);
    for (i, cue) in cues.iter_mut().enumerate() {
        cue.segment_id = i;
    }
    Ok(cues)
}

fn is_header(line: &str) -> bool {
    match line.strip_prefix("WEBVTT") {
        Some(rest) => rest.is_empty() || rest.starts_with(' ') || rest.starts_with('\t'),
        None => false,
    }
}

fn is_keyword_block(line: &str, keyword: &str) -> bool {
    match line.strip_prefix(keyword) {
        Some(rest) => rest.is_empty() || rest.starts_with(' ') || rest.starts_with('\t'),
        None => false,
    }
}

fn parse_block(block: &[&str], first_line_no: usize) -> Result<Option<TranscriptSegment>, VttError> {
    let first = block[0];
    if ["NOTE", "STYLE", "REGION"].iter().any(|k| is_keyword_block(first, k)) {
        return Ok(None);
    }
    let timing_at = if first.contains("-->") {
        0
    } else if block.len() > 1 && block[1].contains("-->") {
        1
    } else {
        return Ok(None);
    };
    let line_no = first_line_no + timing_at;
    let (start, end) = parse_timing(block[timing_at])
        .ok_or_else(|| VttError::MalformedTimestamp { line: line_no, found: block[timing_at].to_string() })?;
    if end <= start {
        return Err(VttError::NonMonotonicCues { line: line_no, start, end });
    }

    let mut text = String::new();
    for raw in &block[timing_at + 1..] {
        let cleaned = clean_payload(raw);
        let cleaned = cleaned.trim();
        if cleaned.is_empty() {
            continue;
        }
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(cleaned);
    }
    if text.is_empty() {
        return Ok(None);
    }
    Ok(Some(TranscriptSegment { segment_id: 0, start, end, text }))
}

fn parse_timing(line: &str) -> Option<(Millis, Millis)> {
    let (left, right) = line.split_once("-->")?;
    let start = parse_timestamp(left.trim())?;
    let end_token = right.split_whitespace().next()?;
    // no whitespace at all between `-->` and the end stamp is tolerated
    let end = parse_timestamp(end_token)?;
    Some((start, end))
}

/// Parses `HH:MM:SS.mmm` (two or more hour digits) or `MM:SS.mmm`.
pub fn parse_timestamp(s: &str) -> Option<Millis> {
    let parts: Vec<&str> = s.split(':').collect();
    let (hours, mins, rest) = match parts.as_slice() {
        [h, m, rest] => {
            if h.len() < 2 || !all_digits(h) {
                return None;
            }
            (h.parse::<u64>().ok()?, *m, *rest)
        }
        [m, rest] => (0, *m, *rest),
        _ => return None,
    };
    if mins.len() != 2 || !all_digits(mins) {
        return None;
    }
    let (secs, millis) = rest.split_once('.')?;
    if secs.len() != 2 || !all_digits(secs) || millis.len() != 3 || !all_digits(millis) {
        return None;
    }
    let mins: u64 = mins.parse().ok()?;
    let secs: u64 = secs.parse().ok()?;
    let millis: u64 = millis.parse().ok()?;
    if mins > 59 || secs > 59 {
        return None;
    }
    Some(Millis(((hours * 60 + mins) * 60 + secs) * 1000 + millis))
}

fn all_digits(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

/// Removes `<...>` markup and decodes character references.
fn clean_payload(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut rest = line;
    while let Some(idx) = rest.find(['<', '&']) {
        out.push_str(&rest[..idx]);
        let tail = &rest[idx..];
        if tail.starts_with('<') {
            match tail.find('>') {
                Some(close) => rest = &tail[close + 1..],
                None => {
                    out.push_str(tail);
                    rest = "";
                }
            }
        } else {
            match decode_entity(tail) {
                Some((ch, used)) => {
                    out.push(ch);
                    rest = &tail[used..];
                }
                None => {
                    out.push('&');
                    rest = &tail[1..];
                }
            }
        }
    }
    out.push_str(rest);
    out
}

fn decode_entity(s: &str) -> Option<(char, usize)> {
    let semi = s.find(';')?;
    let name = &s[1..semi];
    let ch = match name {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => '\u{a0}',
        "lrm" => '\u{200e}',
        "rlm" => '\u{200f}',
        _ => {
            let num = name.strip_prefix('#')?;
            let code = match num.strip_prefix(['x', 'X']) {
                Some(hex) => u32::from_str_radix(hex, 16).ok()?,
                None => num.parse().ok()?,
            };
            char::from_u32(code)?
        }
    };
    Some((ch, semi + 1))
}

/// Writes segments as a WEBVTT document that [`parse_webvtt`] reads back unchanged.
pub fn to_webvtt(segments: &[TranscriptSegment]) -> String {
    let mut out = String::from("WEBVTT\n");
    for seg in segments {
        out.push('\n');
        write_cue(&mut out, seg);
    }
    out
}

/// Appends one cue block (timing line, escaped payload, trailing newline).
pub fn write_cue(out: &mut String, seg: &TranscriptSegment) {
    let _ = writeln!(out, "{} --> {}", seg.start, seg.end);
    for ch in seg.text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\n' | '\r' => out.push(' '),
            c => out.push(c),
        }
    }
    out.push('\n');
}
