//! Global context: a once-per-video summary of contiguous topic clusters.
//!
//! The transcript and frames are packed into batches that fit the model's
//! context window, each batch is summarized with a fixed prompt, and the
//! per-batch cluster lists are concatenated in order. Cluster seams are then
//! snapped so each cluster starts exactly where the previous one ended.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{chat_text, Backend, BackendError, ChatRequest, Part, TokenEstimator};
use crate::clock::Clock;
use crate::time::Millis;
use crate::transcript::{FrameRecord, TranscriptSegment, VideoAsset};
use crate::vtt;

/// System prompt for per-batch summarization.
pub const SUMMARY_SYSTEM_PROMPT: &str = "You are provided with a transcript in WEBVTT format and a set of frames extracted from the corresponding video. Please perform the following tasks:

**Topic Clustering**:
Analyze the captions and cluster them into coherent topics.

For each cluster, provide:
   The start and end timestamps covered by the topic.
   The start_time of each topic cluster must be exactly equal to the end_time of the previous topic cluster, except for the first cluster.
   A brief topic title and a short summary.

**Character Description**:
Identify any characters mentioned or appearing in each topic cluster.
For each character, provide a brief description based on both the transcript and the video frames (e.g., appearance, attire, actions, emotions).
Ensure that the character’s name appears in the topic title or summary for clusters where they are relevant.

**Frame References**:
For each topic cluster, reference the specific video frames that correspond to the start and end timestamps.
If a character is described, refer to the frame(s) where their appearance or actions are most clearly depicted.

**Output Format:** For each topic cluster, include:
   Start timestamp
   End timestamp
   Topic Title (include character names if relevant)
   Short summary of the topic
   Character Descriptions
   Background Descriptions
   Referenced Video Frames";

/// Output labels, in the order the summary prompt lists them.
pub const LABEL_START: &str = "Start timestamp";
pub const LABEL_END: &str = "End timestamp";
pub const LABEL_TITLE: &str = "Topic Title";
pub const LABEL_SUMMARY: &str = "Short summary of the topic";
pub const LABEL_CHARACTERS: &str = "Character Descriptions";
pub const LABEL_BACKGROUND: &str = "Background Descriptions";
pub const LABEL_FRAMES: &str = "Referenced Video Frames";

const FORMAT_INSTRUCTIONS: &str = "Write every field of every cluster on its own line, prefixed by its label and a colon, in this order: \
Start timestamp, End timestamp, Topic Title, Short summary of the topic, Character Descriptions, Background Descriptions, Referenced Video Frames. \
Write timestamps as HH:MM:SS.mmm. Under Character Descriptions put one character per line as `- Name: description`. \
For Referenced Video Frames list the timestamps from the frame captions, separated by commas.";

pub const DEFAULT_REPAIR_TOLERANCE: Millis = Millis(2000);
pub const DEFAULT_BUDGET_FRACTION: f64 = 0.7;

/// Version tag for persisted summaries.
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaBatch {
    pub batch_id: usize,
    pub segments: Vec<TranscriptSegment>,
    pub frames: Vec<FrameRecord>,
    /// Time span this batch is responsible for.
    pub span_start: Millis,
    pub span_end: Millis,
    pub token_estimate: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Character {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCluster {
    pub start: Millis,
    pub end: Millis,
    pub title: String,
    pub summary: String,
    pub characters: Vec<Character>,
    pub background: String,
    pub frame_refs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalSummary {
    pub video_id: String,
    pub clusters: Vec<TopicCluster>,
    /// Clock milliseconds at generation time.
    pub generated_at: u64,
    pub source_batches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchItem {
    Segment(usize),
    Frame(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SummaryError {
    #[error("asset has neither transcript segments nor frames")]
    EmptyAsset,
    #[error("{item:?} needs {cost} tokens, over the batch budget {budget}")]
    ItemExceedsBudget { item: BatchItem, cost: usize, budget: usize },
    #[error("no topic cluster could be parsed from the response")]
    NoClustersParsed,
    #[error("cluster {index} starts {offset_ms} ms away from the previous end, beyond tolerance")]
    IrreparableTimeline { index: usize, offset_ms: u64 },
    #[error("cluster {index} is out of order or empty")]
    InvalidCluster { index: usize },
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("batch {batch_id}: {source}")]
    Batch { batch_id: usize, source: Box<SummaryError> },
}

impl GlobalSummary {
    /// Ordered clusters, positive spans, and exact seams.
    pub fn validate(&self) -> Result<(), SummaryError> {
        validate_clusters(&self.clusters)
    }

    pub fn time_span(&self) -> Option<(Millis, Millis)> {
        Some((self.clusters.first()?.start, self.clusters.last()?.end))
    }

    /// Compact rendering for prompts: time range, title and character names per cluster.
    pub fn digest(&self) -> String {
        let mut out = String::new();
        for c in &self.clusters {
            let _ = write!(out, "[{} - {}] {}", c.start, c.end, c.title);
            if !c.characters.is_empty() {
                out.push_str(" (characters: ");
                for (i, ch) in c.characters.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    out.push_str(&ch.name);
                }
                out.push(')');
            }
            out.push('\n');
        }
        out
    }

    pub fn characters(&self) -> impl Iterator<Item = &Character> {
        self.clusters.iter().flat_map(|c| c.characters.iter())
    }
}

fn validate_clusters(clusters: &[TopicCluster]) -> Result<(), SummaryError> {
    for (i, c) in clusters.iter().enumerate() {
        if c.end <= c.start {
            return Err(SummaryError::InvalidCluster { index: i });
        }
        if i > 0 && c.start != clusters[i - 1].end {
            return Err(SummaryError::IrreparableTimeline { index: i, offset_ms: c.start.abs_diff(clusters[i - 1].end) });
        }
    }
    Ok(())
}

fn cue_block(seg: &TranscriptSegment) -> String {
    let mut out = String::from("\n");
    vtt::write_cue(&mut out, seg);
    out
}

fn frame_caption(frame: &FrameRecord) -> String {
    format!("Frame {} at {}", frame.frame_id, frame.timestamp)
}

fn span_instructions(span_start: Millis, span_end: Millis) -> String {
    format!(
        "This batch covers {span_start} to {span_end}. Start the first cluster at {span_start} and end the last cluster at {span_end}.\n{FORMAT_INSTRUCTIONS}"
    )
}

/// Tokens every batch pays regardless of content (WEBVTT header and instructions).
fn batch_overhead(estimator: &TokenEstimator) -> usize {
    // instructions carry two timestamps of at least 12 chars each; budget for wide hours
    estimator.text("WEBVTT\n") + estimator.text(&span_instructions(Millis(u64::MAX / 2), Millis(u64::MAX / 2)))
}

fn frame_cost(frame: &FrameRecord, estimator: &TokenEstimator) -> usize {
    estimator.text(&frame_caption(frame)) + estimator.image_cost
}

struct Item {
    id: BatchItem,
    segment: Option<usize>,
    frames: core::ops::Range<usize>,
    cost: usize,
}

/// Greedy contiguous packing of segments (each with the frames up to the next
/// segment's start) into batches whose rendered input stays within `budget`.
///
/// Frames before the first segment ride with it. A video without a transcript
/// is batched frame by frame.
pub fn plan_batches(
    asset: &VideoAsset,
    budget: usize,
    estimator: &TokenEstimator,
) -> Result<Vec<MediaBatch>, SummaryError> {
    if asset.is_empty() {
        return Err(SummaryError::EmptyAsset);
    }
    let overhead = batch_overhead(estimator);
    let items = batch_items(asset, estimator);

    let mut groups: Vec<core::ops::Range<usize>> = Vec::new();
    let mut current_start = 0;
    let mut current_cost = overhead;
    for (k, item) in items.iter().enumerate() {
        if overhead + item.cost > budget {
            return Err(SummaryError::ItemExceedsBudget { item: item.id, cost: overhead + item.cost, budget });
        }
        if k > current_start && current_cost + item.cost > budget {
            groups.push(current_start..k);
            current_start = k;
            current_cost = overhead;
        }
        current_cost += item.cost;
    }
    groups.push(current_start..items.len());

    let mut batches = Vec::with_capacity(groups.len());
    for (batch_id, range) in groups.iter().enumerate() {
        let group = &items[range.clone()];
        let segments: Vec<TranscriptSegment> =
            group.iter().filter_map(|it| it.segment).map(|s| asset.segments[s].clone()).collect();
        let frame_lo = group.first().map_or(0, |it| it.frames.start);
        let frame_hi = group.last().map_or(0, |it| it.frames.end);
        let frames = asset.frames[frame_lo..frame_hi].to_vec();
        let span_start = if batch_id == 0 { Millis::ZERO } else { item_start(asset, &group[0]) };
        let span_end = match groups.get(batch_id + 1) {
            Some(next) => item_start(asset, &items[next.start]),
            None => asset.duration,
        };
        let mut batch = MediaBatch { batch_id, segments, frames, span_start, span_end, token_estimate: 0 };
        batch.token_estimate = estimator.parts(&batch_user_parts(&batch));
        batches.push(batch);
    }
    Ok(batches)
}

fn item_start(asset: &VideoAsset, item: &Item) -> Millis {
    match item.id {
        BatchItem::Segment(s) => asset.segments[s].start,
        BatchItem::Frame(f) => asset.frames[f].timestamp,
    }
}

fn batch_items(asset: &VideoAsset, estimator: &TokenEstimator) -> Vec<Item> {
    let frames = &asset.frames;
    if asset.segments.is_empty() {
        return frames
            .iter()
            .map(|f| Item {
                id: BatchItem::Frame(f.frame_id),
                segment: None,
                frames: f.frame_id..f.frame_id + 1,
                cost: frame_cost(f, estimator),
            })
            .collect();
    }
    let segs = &asset.segments;
    let mut items = Vec::with_capacity(segs.len());
    let mut lo = 0;
    for (k, seg) in segs.iter().enumerate() {
        let hi = match segs.get(k + 1) {
            Some(next) => frames.partition_point(|f| f.timestamp < next.start),
            None => frames.len(),
        };
        let hi = hi.max(lo);
        let cost = estimator.text(&cue_block(seg)) + frames[lo..hi].iter().map(|f| frame_cost(f, estimator)).sum::<usize>();
        items.push(Item { id: BatchItem::Segment(seg.segment_id), segment: Some(k), frames: lo..hi, cost });
        lo = hi;
    }
    items
}

fn batch_user_parts(batch: &MediaBatch) -> Vec<Part> {
    let mut parts = Vec::with_capacity(2 + 2 * batch.frames.len());
    parts.push(Part::text(vtt::to_webvtt(&batch.segments)));
    for frame in &batch.frames {
        parts.push(Part::text(frame_caption(frame)));
        parts.push(Part::image(frame.image_ref.clone()));
    }
    parts.push(Part::text(span_instructions(batch.span_start, batch.span_end)));
    parts
}

/// The summary request for one batch: fixed system prompt, then the batch's
/// transcript as WEBVTT, its captioned frames, and the output-format instructions.
pub fn render_summary_prompt(batch: &MediaBatch) -> ChatRequest {
    ChatRequest::new(SUMMARY_SYSTEM_PROMPT, batch_user_parts(batch)).with_max_output_tokens(4096)
}

/// Clusters parsed from one response plus notes about skipped material.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedClusters {
    pub clusters: Vec<TopicCluster>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Start,
    End,
    Title,
    Summary,
    Characters,
    Background,
    Frames,
}

const FIELD_LABELS: &[(&str, Field)] = &[
    (LABEL_START, Field::Start),
    ("Start time", Field::Start),
    (LABEL_END, Field::End),
    ("End time", Field::End),
    (LABEL_TITLE, Field::Title),
    (LABEL_SUMMARY, Field::Summary),
    ("Short summary", Field::Summary),
    ("Summary", Field::Summary),
    (LABEL_CHARACTERS, Field::Characters),
    ("Characters", Field::Characters),
    (LABEL_BACKGROUND, Field::Background),
    ("Background", Field::Background),
    (LABEL_FRAMES, Field::Frames),
    ("Referenced Frames", Field::Frames),
];

/// Splits `Label: value` when the label is one of the output-format fields.
fn split_label(line: &str) -> Option<(Field, &str)> {
    let trimmed = line.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '-' | '*' | '#' | '•'));
    let trimmed = trimmed.trim_start_matches(|c: char| c.is_ascii_digit());
    let trimmed = trimmed.strip_prefix(". ").unwrap_or(trimmed).trim_start();
    let (label, value) = trimmed.split_once(':')?;
    let label = label.trim().trim_matches('*').trim();
    // "(include character names...)" style suffixes
    let label = label.split('(').next().unwrap_or(label).trim();
    let value = value.trim_start_matches('*').trim();
    FIELD_LABELS
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(label))
        .map(|(_, field)| (*field, value))
}

/// Reads `HH:MM:SS.mmm`, `MM:SS.mmm`, `HH:MM:SS`, or plain seconds.
pub fn parse_loose_timestamp(s: &str) -> Option<Millis> {
    let s = s.trim().trim_matches(|c| matches!(c, '*' | '`' | '[' | ']' | '(' | ')'));
    if let Some(t) = vtt::parse_timestamp(s) {
        return Some(t);
    }
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 && parts.iter().all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit())) {
        let h: u64 = parts[0].parse().ok()?;
        let m: u64 = parts[1].parse().ok()?;
        let sec: u64 = parts[2].parse().ok()?;
        if m < 60 && sec < 60 {
            return Some(Millis(((h * 60 + m) * 60 + sec) * 1000));
        }
        return None;
    }
    let secs = s.strip_suffix('s').unwrap_or(s);
    secs.parse::<f64>().ok().and_then(Millis::from_secs_f64)
}

#[derive(Default)]
struct Draft {
    start: Option<String>,
    end: Option<String>,
    title: String,
    summary: String,
    characters: Vec<Character>,
    background: String,
    frames: String,
    touched: bool,
}

fn push_spaced(target: &mut String, text: &str) {
    let text = text.trim();
    if text.is_empty() {
        return;
    }
    if !target.is_empty() {
        target.push(' ');
    }
    target.push_str(text);
}

fn push_characters(target: &mut Vec<Character>, text: &str) {
    for piece in text.split(';') {
        let piece = piece.trim().trim_start_matches(['-', '*', '•']).trim();
        if piece.is_empty() || piece.eq_ignore_ascii_case("none") || piece.eq_ignore_ascii_case("n/a") {
            continue;
        }
        let (name, description) = match piece.split_once(':') {
            Some((n, d)) => (n.trim().trim_matches('*').trim(), d.trim()),
            None => (piece, ""),
        };
        if !name.is_empty() {
            target.push(Character { name: name.to_string(), description: description.to_string() });
        }
    }
}

impl Draft {
    fn add(&mut self, field: Field, value: &str) {
        self.touched = true;
        match field {
            Field::Start => self.start = Some(value.to_string()),
            Field::End => self.end = Some(value.to_string()),
            Field::Title => push_spaced(&mut self.title, value),
            Field::Summary => push_spaced(&mut self.summary, value),
            Field::Characters => push_characters(&mut self.characters, value),
            Field::Background => push_spaced(&mut self.background, value),
            Field::Frames => {
                if !self.frames.is_empty() {
                    self.frames.push(',');
                }
                self.frames.push_str(value);
            }
        }
    }

    fn finish(self, ordinal: usize, frames: &[FrameRecord], warnings: &mut Vec<String>) -> Option<TopicCluster> {
        let start = self.start.as_deref().and_then(parse_loose_timestamp);
        let end = self.end.as_deref().and_then(parse_loose_timestamp);
        let (start, end) = match (start, end) {
            (Some(s), Some(e)) if e > s => (s, e),
            _ => {
                warnings.push(format!("cluster {ordinal}: missing or invalid start/end timestamps, skipped"));
                return None;
            }
        };
        let title = self.title.trim().trim_matches('*').trim().to_string();
        if title.is_empty() {
            warnings.push(format!("cluster {ordinal}: missing topic title, skipped"));
            return None;
        }
        let mut frame_refs = Vec::new();
        for token in self.frames.split([',', ';']) {
            let token = token.trim();
            if token.is_empty() || token.eq_ignore_ascii_case("none") {
                continue;
            }
            let stamp = token.split_whitespace().rev().find_map(parse_loose_timestamp);
            match stamp.and_then(|t| nearest_frame(frames, t)) {
                Some(id) if !frame_refs.contains(&id) => frame_refs.push(id),
                Some(_) => {}
                None => warnings.push(format!("cluster {ordinal}: unresolved frame reference `{token}`")),
            }
        }
        Some(TopicCluster {
            start,
            end,
            title,
            summary: self.summary,
            characters: self.characters,
            background: self.background,
            frame_refs,
        })
    }
}

/// Closest frame within one second of `t`.
fn nearest_frame(frames: &[FrameRecord], t: Millis) -> Option<usize> {
    let pos = frames.partition_point(|f| f.timestamp < t);
    [pos.checked_sub(1), Some(pos)]
        .into_iter()
        .flatten()
        .filter_map(|i| frames.get(i))
        .min_by_key(|f| f.timestamp.abs_diff(t))
        .filter(|f| f.timestamp.abs_diff(t) <= 1000)
        .map(|f| f.frame_id)
}

/// Parses labeled output-format fields into clusters. A new cluster begins
/// at each `Start timestamp` label. Unlabeled lines continue the previous
/// field. Clusters missing timestamps or a title are skipped with a warning.
pub fn parse_summary_response(text: &str, frames: &[FrameRecord]) -> Result<ParsedClusters, SummaryError> {
    let mut parsed = ParsedClusters::default();
    let mut draft = Draft::default();
    let mut last_field: Option<Field> = None;
    let mut ordinal = 0;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match split_label(line) {
            Some((field, value)) => {
                if field == Field::Start && draft.touched {
                    let done = core::mem::take(&mut draft);
                    parsed.clusters.extend(done.finish(ordinal, frames, &mut parsed.warnings));
                    ordinal += 1;
                }
                draft.add(field, value);
                last_field = Some(field);
            }
            None => {
                if let Some(field @ (Field::Title | Field::Summary | Field::Characters | Field::Background | Field::Frames)) =
                    last_field
                {
                    draft.add(field, line)
                }
            }
        }
    }
    if draft.touched {
        parsed.clusters.extend(draft.finish(ordinal, frames, &mut parsed.warnings));
    }
    if parsed.clusters.is_empty() {
        return Err(SummaryError::NoClustersParsed);
    }
    Ok(parsed)
}

/// Snaps each cluster start onto the previous cluster's end when they differ
/// by at most `tolerance`; larger gaps or overlaps are errors.
pub fn repair_contiguity(mut clusters: Vec<TopicCluster>, tolerance: Millis) -> Result<Vec<TopicCluster>, SummaryError> {
    clusters.sort_by_key(|c| c.start);
    for k in 1..clusters.len() {
        let prev_end = clusters[k - 1].end;
        let offset = clusters[k].start.abs_diff(prev_end);
        if offset == 0 {
            continue;
        }
        if offset > tolerance.0 || clusters[k].end <= prev_end {
            return Err(SummaryError::IrreparableTimeline { index: k, offset_ms: offset });
        }
        clusters[k].start = prev_end;
    }
    validate_clusters(&clusters)?;
    Ok(clusters)
}

/// Drops frame references whose timestamps fall outside the cluster span.
pub fn retain_frames_in_span(cluster: &mut TopicCluster, frames: &[FrameRecord]) {
    let (start, end) = (cluster.start, cluster.end);
    cluster
        .frame_refs
        .retain(|id| frames.get(*id).is_some_and(|f| f.timestamp >= start && f.timestamp <= end));
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryConfig {
    /// Token budget for one batch's user content.
    pub batch_budget: usize,
    pub repair_tolerance: Millis,
}

impl SummaryConfig {
    /// Budget as a fraction of the context window.
    pub fn for_context_window(context_window: usize, fraction: f64) -> Self {
        SummaryConfig {
            batch_budget: (context_window as f64 * fraction) as usize,
            repair_tolerance: DEFAULT_REPAIR_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryOutcome {
    pub summary: GlobalSummary,
    pub warnings: Vec<String>,
    pub backend_calls: usize,
}

/// Batches, summarizes each batch, and joins the results into one validated timeline.
pub fn build_global_summary<B: Backend + ?Sized>(
    asset: &VideoAsset,
    backend: &B,
    config: &SummaryConfig,
    clock: &dyn Clock,
) -> Result<SummaryOutcome, SummaryError> {
    let batches = plan_batches(asset, config.batch_budget, &backend.estimator())?;
    let mut clusters = Vec::new();
    let mut warnings = Vec::new();
    for batch in &batches {
        let in_batch = |source: SummaryError| SummaryError::Batch { batch_id: batch.batch_id, source: Box::new(source) };
        let text = chat_text(backend, &render_summary_prompt(batch)).map_err(|e| in_batch(e.into()))?;
        let parsed = parse_summary_response(&text, &asset.frames).map_err(in_batch)?;
        warnings.extend(parsed.warnings.into_iter().map(|w| format!("batch {}: {w}", batch.batch_id)));
        let repaired = repair_contiguity(parsed.clusters, config.repair_tolerance).map_err(in_batch)?;
        clusters.extend(repaired);
    }
    // seams between batches
    let mut clusters = repair_contiguity(clusters, config.repair_tolerance)?;
    for cluster in &mut clusters {
        retain_frames_in_span(cluster, &asset.frames);
    }
    let summary = GlobalSummary {
        video_id: asset.video_id.clone(),
        clusters,
        generated_at: clock.now_ms(),
        source_batches: batches.len(),
    };
    summary.validate()?;
    Ok(SummaryOutcome { summary, warnings, backend_calls: batches.len() })
}
