//! Pre-retrieval thinking agent.
//!
//! One planning chat call picks helper functions from a registry. Their
//! outputs refine the question into the retrieval query, which is embedded
//! and used to gather local context: a three-frame window around the best
//! frame plus the top-n transcript segments.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::backend::{chat_text, Backend, BackendError, ChatRequest, Part};
use crate::clock::Clock;
use crate::embedding::{rank_order, EmbeddingError, EmbeddingIndex, EmbeddingVector, Hit, ItemKind, RetrievalResult};
use crate::rethink::RethinkInstruction;
use crate::summary::{parse_loose_timestamp, GlobalSummary};
use crate::text;
use crate::time::Millis;
use crate::transcript::{FrameRecord, TranscriptSegment, VideoAsset};

pub const EXPAND_QUERY: &str = "expand_query";
pub const EXTRACT_TEMPORAL_ANCHORS: &str = "extract_temporal_anchors";
pub const TERM_FREQUENCY: &str = "term_frequency";
pub const ACTION_BEFORE_EVENT: &str = "get_action_before_an_event";
pub const ACTION_AFTER_EVENT: &str = "get_action_after_an_event";
pub const WEB_SEARCH: &str = "web_search";
pub const MULTI_HOP: &str = "multi_hop_query_generation";

/// Frames handed to the model by the before/after action functions.
pub const ACTION_WINDOW_FRAMES: usize = 6;

const PLAN_SYSTEM_PROMPT: &str = "You are the pre-retrieval planning step of a video question answering system. \
Read the question, the video summary and any rethink instruction, then decide which of the available functions should run \
before evidence is retrieved. Reply with only a JSON array of calls, each of the form \
{\"function\": \"<name>\", \"arguments\": {...}}. Reply with [] when direct retrieval is enough.";

const PLAN_REASK: &str = "Your previous reply could not be read. Reply with only a JSON array of function calls, or [].";

const EXPAND_SYSTEM_PROMPT: &str = "Rewrite the question so that it is self-contained. Add the given descriptions in \
parentheses right after the names they describe and keep everything else unchanged. Reply with the rewritten question only.";

const ACTION_SYSTEM_PROMPT: &str = "These are consecutive video frames in time order. Describe the actions that take \
place across them in one or two sentences.";

const MULTI_HOP_SYSTEM_PROMPT: &str = "Break the question into two to four simpler sub-questions that can each be \
answered from a short stretch of the video. Reply with only a JSON array of strings. If the question is already simple, \
reply with a JSON array containing just the question.";

const ANCHOR_STOPWORDS: &[&str] = &[
    "about", "after", "before", "does", "event", "from", "happen", "happens", "into", "moment", "scene", "that", "their",
    "there", "this", "time", "what", "when", "where", "which", "with",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("function plan could not be parsed after a re-ask: `{0}`")]
    PlanParseFailure(String),
    #[error("no temporal anchors found for `{0}`")]
    NoAnchorsFound(String),
    #[error("no frames {direction:?} {at}")]
    NoFramesInDirection { direction: Direction, at: Millis },
    #[error("bad arguments for {function}: {reason}")]
    BadArguments { function: String, reason: String },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("retrieval: {0}")]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub label: String,
    pub timestamp: Millis,
}

/// What one function call contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FunctionOutput {
    ExpandedQuery { text: String },
    TemporalAnchors { anchors: Vec<Anchor> },
    TermCount { term: String, count: usize },
    ActionDescription { direction: Direction, at: Millis, frames: Vec<usize>, text: String },
    WebSnippets { snippets: Vec<String>, note: Option<String> },
    /// Probes that replace the single retrieval; `note` says why a fallback was used.
    SubQueries { queries: Vec<String>, note: Option<String> },
    /// A function that could not produce a result; the plan carries on.
    Note { text: String },
}

impl FunctionOutput {
    /// Text appended to the refined query's context.
    pub fn render(&self) -> String {
        match self {
            FunctionOutput::ExpandedQuery { text } => text.clone(),
            FunctionOutput::TemporalAnchors { anchors } => {
                let mut out = String::new();
                for (i, a) in anchors.iter().enumerate() {
                    if i > 0 {
                        out.push_str("; ");
                    }
                    let _ = write!(out, "{} at {}", a.label, a.timestamp);
                }
                out
            }
            FunctionOutput::TermCount { count, .. } => format!("{count}"),
            FunctionOutput::ActionDescription { direction, at, text, .. } => {
                let dir = match direction {
                    Direction::Before => "before",
                    Direction::After => "after",
                };
                format!("{dir} {at}: {text}")
            }
            FunctionOutput::WebSnippets { snippets, note } => {
                let mut out = snippets.join(" | ");
                if let Some(note) = note {
                    if !out.is_empty() {
                        out.push_str(" | ");
                    }
                    out.push_str(note);
                }
                out
            }
            FunctionOutput::SubQueries { queries, note } => {
                let mut out = queries.join(" | ");
                if let Some(note) = note {
                    let _ = write!(out, " ({note})");
                }
                out
            }
            FunctionOutput::Note { text } => text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub description: String,
    pub required: bool,
}

/// Name, description and argument schema shown to the planner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub name: String,
    pub description: String,
    pub arguments: Vec<ArgSpec>,
}

impl FunctionSpec {
    pub fn new(name: &str, description: &str, arguments: &[(&str, &str, bool)]) -> Self {
        FunctionSpec {
            name: name.into(),
            description: description.into(),
            arguments: arguments
                .iter()
                .map(|(n, d, r)| ArgSpec { name: (*n).into(), description: (*d).into(), required: *r })
                .collect(),
        }
    }
}

pub type Arguments = Map<String, Value>;

/// Read-only state a function may use.
pub struct FunctionContext<'a> {
    pub query: &'a str,
    pub summary: &'a GlobalSummary,
    pub asset: &'a VideoAsset,
    pub index: &'a EmbeddingIndex,
    pub backend: &'a dyn Backend,
    pub search: &'a dyn SearchProvider,
    pub config: &'a AgentConfig,
}

/// A registry entry. Built-in functions implement this; so can extensions.
pub trait AgentFunction: Send + Sync {
    fn spec(&self) -> &FunctionSpec;
    fn execute(&self, args: &Arguments, ctx: &FunctionContext<'_>) -> Result<FunctionOutput, AgentError>;
}

pub struct FunctionRegistry {
    functions: Vec<Box<dyn AgentFunction>>,
}

impl Default for FunctionRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl FunctionRegistry {
    pub fn empty() -> Self {
        FunctionRegistry { functions: Vec::new() }
    }

    /// The seven built-in functions.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ExpandQuery::new()));
        r.register(Box::new(ExtractTemporalAnchors::new()));
        r.register(Box::new(TermFrequency::new()));
        r.register(Box::new(ActionWindow::new(Direction::Before)));
        r.register(Box::new(ActionWindow::new(Direction::After)));
        r.register(Box::new(WebSearch::new()));
        r.register(Box::new(MultiHop::new()));
        r
    }

    /// Adds a function, replacing any existing one with the same name.
    pub fn register(&mut self, function: Box<dyn AgentFunction>) {
        let name = function.spec().name.clone();
        match self.functions.iter().position(|f| f.spec().name == name) {
            Some(i) => self.functions[i] = function,
            None => self.functions.push(function),
        }
    }

    pub fn get(&self, name: &str) -> Option<&dyn AgentFunction> {
        self.functions.iter().find(|f| f.spec().name == name).map(|f| f.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.functions.iter().map(|f| f.spec().name.as_str())
    }

    pub fn specs(&self) -> impl Iterator<Item = &FunctionSpec> {
        self.functions.iter().map(|f| f.spec())
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// One line per function: `- name(arg, arg?): description`.
    pub fn render_descriptions(&self) -> String {
        let mut out = String::new();
        for spec in self.specs() {
            let _ = write!(out, "- {}(", spec.name);
            for (i, arg) in spec.arguments.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&arg.name);
                if !arg.required {
                    out.push('?');
                }
            }
            let _ = writeln!(out, "): {}", spec.description);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Transcript segments retrieved per probe.
    pub top_n: usize,
    pub max_functions: usize,
    /// Below this best frame score, temporal anchors come from the summary.
    pub anchor_floor: f64,
    pub snippet_limit: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { top_n: 5, max_functions: 4, anchor_floor: 0.2, snippet_limit: 3 }
    }
}

pub struct AgentInput<'a> {
    pub query: &'a str,
    pub summary: &'a GlobalSummary,
    pub instruction: Option<&'a RethinkInstruction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedCall {
    pub function_name: String,
    pub arguments: Arguments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionCallRecord {
    pub function_name: String,
    pub arguments: Arguments,
    pub output: FunctionOutput,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQuery {
    pub text: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedQuery {
    pub original: String,
    pub refined_text: String,
    /// `name: output` for every call other than query expansion, in call order.
    pub context_fragments: Vec<String>,
    pub anchors: Vec<Anchor>,
    pub sub_queries: Vec<SubQuery>,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSegment {
    pub segment: TranscriptSegment,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalContext {
    /// Frame windows around each probe's best frame, by timestamp.
    pub frames: Vec<FrameRecord>,
    /// Best transcript segments across probes, by score.
    pub transcripts: Vec<ScoredSegment>,
    pub anchors: Vec<Anchor>,
    /// Raw retrieval per probe, in probe order.
    pub retrievals: Vec<RetrievalResult>,
}

/// Result of one agent pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPass {
    pub plan: Vec<PlannedCall>,
    pub calls: Vec<FunctionCallRecord>,
    pub refined: RefinedQuery,
    pub local: LocalContext,
    pub warnings: Vec<String>,
}

/// Results of web search lookups.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("web search provider unavailable")]
    Unavailable,
    #[error("web search failed: {0}")]
    Failed(String),
}

pub trait SearchProvider: Send + Sync {
    fn search(&self, term: &str, limit: usize) -> Result<Vec<String>, SearchError>;
}

/// The default provider: no network, always unavailable.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineSearch;

impl SearchProvider for OfflineSearch {
    fn search(&self, _term: &str, _limit: usize) -> Result<Vec<String>, SearchError> {
        Err(SearchError::Unavailable)
    }
}

/// Canned snippets keyed by lowercased term.
#[derive(Debug, Clone, Default)]
pub struct FixtureSearch {
    entries: BTreeMap<String, Vec<String>>,
}

impl FixtureSearch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, term: &str, snippets: &[&str]) -> Self {
        self.entries.insert(term.to_lowercase(), snippets.iter().map(|s| (*s).to_string()).collect());
        self
    }
}

impl SearchProvider for FixtureSearch {
    fn search(&self, term: &str, limit: usize) -> Result<Vec<String>, SearchError> {
        Ok(self.entries.get(&term.trim().to_lowercase()).map_or_else(Vec::new, |s| s.iter().take(limit).cloned().collect()))
    }
}

// ---------------------------------------------------------------- planning

fn instruction_block(instruction: &RethinkInstruction) -> String {
    let mut out = format!(
        "Rethink instruction (iteration {}): {}\nDiagnosis: {}\n",
        instruction.iteration, instruction.directive, instruction.diagnosis
    );
    if !instruction.suggested_functions.is_empty() {
        let _ = writeln!(out, "Suggested functions: {}", instruction.suggested_functions.join(", "));
    }
    out
}

pub fn render_plan_prompt(input: &AgentInput<'_>, registry: &FunctionRegistry) -> ChatRequest {
    let mut text = format!("Question: {}\n\nVideo summary:\n{}\n", input.query, input.summary.digest());
    if let Some(instruction) = input.instruction {
        text.push_str(&instruction_block(instruction));
        text.push('\n');
    }
    text.push_str("Available functions:\n");
    text.push_str(&registry.render_descriptions());
    ChatRequest::new(PLAN_SYSTEM_PROMPT, vec![Part::text(text)])
}

/// Slice from the first `open` to the last `close`, inclusive.
fn bracketed(text: &str, open: char, close: char) -> Option<&str> {
    let start = text.find(open)?;
    let end = text.rfind(close)?;
    (end > start).then(|| &text[start..=end])
}

fn parse_plan(text: &str) -> Option<Vec<(String, Arguments)>> {
    let json = bracketed(text, '[', ']')?;
    let values: Vec<Value> = serde_json::from_str(json).ok()?;
    let mut calls = Vec::with_capacity(values.len());
    for value in values {
        let obj = value.as_object()?;
        let name = obj.get("function").or_else(|| obj.get("name"))?.as_str()?.trim().to_string();
        let args = match obj.get("arguments").or_else(|| obj.get("args")) {
            None | Some(Value::Null) => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return None,
        };
        calls.push((name, args));
    }
    Some(calls)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub calls: Vec<PlannedCall>,
    pub warnings: Vec<String>,
}

/// Asks the backend for a call plan. Unknown functions are dropped and the
/// plan is capped at `max_functions`; an empty plan means direct retrieval.
pub fn plan_functions(
    input: &AgentInput<'_>,
    registry: &FunctionRegistry,
    backend: &dyn Backend,
    config: &AgentConfig,
) -> Result<Plan, AgentError> {
    if input.query.trim().is_empty() {
        return Err(AgentError::EmptyQuery);
    }
    let mut request = render_plan_prompt(input, registry);
    let mut reply = chat_text(backend, &request)?;
    let parsed = match parse_plan(&reply) {
        Some(p) => p,
        None => {
            request.user_parts.push(Part::text(format!("Previous reply: {reply}")));
            request.user_parts.push(Part::text(PLAN_REASK));
            reply = chat_text(backend, &request)?;
            parse_plan(&reply).ok_or_else(|| AgentError::PlanParseFailure(reply.clone()))?
        }
    };
    let mut warnings = Vec::new();
    let mut calls = Vec::new();
    for (name, arguments) in parsed {
        if registry.get(&name).is_none() {
            warnings.push(format!("planner named unknown function `{name}`, dropped"));
            continue;
        }
        if calls.len() == config.max_functions {
            warnings.push(format!("plan exceeds {} functions, `{name}` dropped", config.max_functions));
            continue;
        }
        calls.push(PlannedCall { function_name: name, arguments });
    }
    Ok(Plan { calls, warnings })
}

// ------------------------------------------------------------ functions

fn str_arg<'a>(args: &'a Arguments, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| args.get(*k)?.as_str()).map(str::trim).filter(|s| !s.is_empty())
}

fn bad_args(function: &str, reason: &str) -> AgentError {
    AgentError::BadArguments { function: function.into(), reason: reason.into() }
}

struct ExpandQuery(FunctionSpec);

impl ExpandQuery {
    fn new() -> Self {
        ExpandQuery(FunctionSpec::new(
            EXPAND_QUERY,
            "Adds missing details, such as character descriptions, to enrich the query.",
            &[("query", "question to expand; defaults to the user question", false)],
        ))
    }
}

impl AgentFunction for ExpandQuery {
    fn spec(&self) -> &FunctionSpec {
        &self.0
    }

    fn execute(&self, args: &Arguments, ctx: &FunctionContext<'_>) -> Result<FunctionOutput, AgentError> {
        let query = str_arg(args, &["query"]).unwrap_or(ctx.query);
        let text = fn_expand_query(query, ctx.summary, ctx.backend)?;
        Ok(FunctionOutput::ExpandedQuery { text })
    }
}

/// Characters from the summary that the query names, first description wins.
fn matching_characters<'a>(query: &str, summary: &'a GlobalSummary) -> Vec<&'a crate::summary::Character> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for ch in summary.characters() {
        let named = text::mentions(query, &ch.name)
            || ch.name.split_whitespace().any(|w| w.chars().count() >= 3 && text::mentions(query, w));
        if named && seen.insert(ch.name.to_lowercase()) {
            out.push(ch);
        }
    }
    out
}

/// Rewrites the query with descriptions of the characters it names. Returns
/// the query unchanged, without a model call, when it names none.
pub fn fn_expand_query(query: &str, summary: &GlobalSummary, backend: &dyn Backend) -> Result<String, AgentError> {
    let characters = matching_characters(query, summary);
    if characters.is_empty() {
        return Ok(query.to_string());
    }
    let mut text = format!("Question: {query}\nDescriptions:\n");
    for ch in &characters {
        let _ = writeln!(text, "- {}: {}", ch.name, ch.description);
    }
    let mut settings: Vec<&str> = Vec::new();
    for cluster in &summary.clusters {
        let relevant = characters.iter().any(|ch| cluster.characters.iter().any(|c| c.name == ch.name));
        if relevant && !cluster.background.is_empty() && !settings.contains(&cluster.background.as_str()) {
            settings.push(&cluster.background);
        }
    }
    if !settings.is_empty() {
        text.push_str("Settings:\n");
        for s in settings.iter().take(2) {
            let _ = writeln!(text, "- {s}");
        }
    }
    let reply = chat_text(backend, &ChatRequest::new(EXPAND_SYSTEM_PROMPT, vec![Part::text(text)]))?;
    Ok(if reply.is_empty() { query.to_string() } else { reply })
}

struct ExtractTemporalAnchors(FunctionSpec);

impl ExtractTemporalAnchors {
    fn new() -> Self {
        ExtractTemporalAnchors(FunctionSpec::new(
            EXTRACT_TEMPORAL_ANCHORS,
            "Returns timestamps of retrieved frames or estimates time-based cues from the video summary.",
            &[("event", "short description of the event to locate", true)],
        ))
    }
}

impl AgentFunction for ExtractTemporalAnchors {
    fn spec(&self) -> &FunctionSpec {
        &self.0
    }

    fn execute(&self, args: &Arguments, ctx: &FunctionContext<'_>) -> Result<FunctionOutput, AgentError> {
        let event = str_arg(args, &["event", "description", "query"]).unwrap_or(ctx.query);
        let anchors = fn_extract_temporal_anchors(
            event,
            ctx.index,
            &ctx.asset.video_id,
            &ctx.asset.frames,
            ctx.summary,
            ctx.backend,
            ctx.config,
        )?;
        Ok(FunctionOutput::TemporalAnchors { anchors })
    }
}

/// Timestamps of the frames closest to the event in embedding space; when no
/// frame scores at least `anchor_floor`, start times of summary clusters that
/// mention the event's words instead.
pub fn fn_extract_temporal_anchors(
    event: &str,
    index: &EmbeddingIndex,
    video_id: &str,
    frames: &[FrameRecord],
    summary: &GlobalSummary,
    backend: &dyn Backend,
    config: &AgentConfig,
) -> Result<Vec<Anchor>, AgentError> {
    if index.count(video_id, ItemKind::Frame) > 0 {
        let query = backend.embed_text(event)?.normalized()?;
        let hits = index.top_n(&query, ItemKind::Frame, config.top_n, video_id)?;
        if hits.iter().any(|h| h.score >= config.anchor_floor) {
            return Ok(hits
                .iter()
                .filter_map(|h| frames.get(h.ordinal))
                .map(|f| Anchor { label: format!("frame {}", f.frame_id), timestamp: f.timestamp })
                .collect());
        }
    }
    let words: Vec<String> = text::content_words(event, 4)
        .into_iter()
        .filter(|w| !ANCHOR_STOPWORDS.contains(&w.as_str()))
        .collect();
    let anchors: Vec<Anchor> = summary
        .clusters
        .iter()
        .filter(|c| words.iter().any(|w| text::mentions(&c.title, w) || text::mentions(&c.summary, w)))
        .map(|c| Anchor { label: c.title.clone(), timestamp: c.start })
        .collect();
    if anchors.is_empty() {
        return Err(AgentError::NoAnchorsFound(event.to_string()));
    }
    Ok(anchors)
}

struct TermFrequency(FunctionSpec);

impl TermFrequency {
    fn new() -> Self {
        TermFrequency(FunctionSpec::new(
            TERM_FREQUENCY,
            "Counts how many times a term shows up in the transcription.",
            &[("term", "word or phrase to count", true)],
        ))
    }
}

impl AgentFunction for TermFrequency {
    fn spec(&self) -> &FunctionSpec {
        &self.0
    }

    fn execute(&self, args: &Arguments, ctx: &FunctionContext<'_>) -> Result<FunctionOutput, AgentError> {
        let term = str_arg(args, &["term", "phrase"]).ok_or_else(|| bad_args(TERM_FREQUENCY, "missing `term`"))?;
        Ok(FunctionOutput::TermCount { term: term.to_string(), count: fn_term_frequency(term, &ctx.asset.segments) })
    }
}

/// Word-bounded, case-insensitive occurrences of `term` across all segments.
pub fn fn_term_frequency(term: &str, segments: &[TranscriptSegment]) -> usize {
    segments.iter().map(|s| text::count_phrase(&s.text, term)).sum()
}

struct ActionWindow {
    spec: FunctionSpec,
    direction: Direction,
}

impl ActionWindow {
    fn new(direction: Direction) -> Self {
        let (name, description) = match direction {
            Direction::Before => (
                ACTION_BEFORE_EVENT,
                "Suggests actions by inputting six consecutive frames before the event timestamp to the LVLMs.",
            ),
            Direction::After => (
                ACTION_AFTER_EVENT,
                "Suggests actions by inputting six consecutive frames after the event timestamp to the LVLMs.",
            ),
        };
        ActionWindow {
            spec: FunctionSpec::new(
                name,
                description,
                &[
                    ("timestamp", "event time as HH:MM:SS.mmm or seconds", false),
                    ("event", "event description, located when no timestamp is given", false),
                ],
            ),
            direction,
        }
    }
}

impl AgentFunction for ActionWindow {
    fn spec(&self) -> &FunctionSpec {
        &self.spec
    }

    fn execute(&self, args: &Arguments, ctx: &FunctionContext<'_>) -> Result<FunctionOutput, AgentError> {
        let name = self.spec.name.as_str();
        let at = match args.get("timestamp") {
            Some(Value::Number(n)) => n.as_f64().and_then(Millis::from_secs_f64),
            Some(Value::String(s)) => parse_loose_timestamp(s),
            _ => None,
        };
        let at = match (at, str_arg(args, &["event"])) {
            (Some(t), _) => t,
            (None, Some(event)) => {
                let anchors = fn_extract_temporal_anchors(
                    event,
                    ctx.index,
                    &ctx.asset.video_id,
                    &ctx.asset.frames,
                    ctx.summary,
                    ctx.backend,
                    ctx.config,
                )?;
                anchors[0].timestamp
            }
            (None, None) => return Err(bad_args(name, "needs `timestamp` or `event`")),
        };
        if at > ctx.asset.duration {
            return Err(bad_args(name, "timestamp past the end of the video"));
        }
        let (frames, text) = fn_action_window(at, self.direction, ctx.asset, ctx.backend)?;
        Ok(FunctionOutput::ActionDescription { direction: self.direction, at, frames, text })
    }
}

/// The up-to-six frames strictly before (or after) `at`, nearest last (or first).
pub fn action_frames(frames: &[FrameRecord], at: Millis, direction: Direction) -> &[FrameRecord] {
    match direction {
        Direction::Before => {
            let end = frames.partition_point(|f| f.timestamp < at);
            &frames[end.saturating_sub(ACTION_WINDOW_FRAMES)..end]
        }
        Direction::After => {
            let start = frames.partition_point(|f| f.timestamp <= at);
            &frames[start..(start + ACTION_WINDOW_FRAMES).min(frames.len())]
        }
    }
}

/// Sends the action frames to the model and returns its description.
pub fn fn_action_window(
    at: Millis,
    direction: Direction,
    asset: &VideoAsset,
    backend: &dyn Backend,
) -> Result<(Vec<usize>, String), AgentError> {
    let frames = action_frames(&asset.frames, at, direction);
    if frames.is_empty() {
        return Err(AgentError::NoFramesInDirection { direction, at });
    }
    let label = match direction {
        Direction::Before => "before",
        Direction::After => "after",
    };
    let mut parts = vec![Part::text(format!("Frames {label} the event at {at}:"))];
    for f in frames {
        parts.push(Part::text(format!("Frame {} at {}", f.frame_id, f.timestamp)));
        parts.push(Part::image(f.image_ref.clone()));
    }
    let text = chat_text(backend, &ChatRequest::new(ACTION_SYSTEM_PROMPT, parts))?;
    Ok((frames.iter().map(|f| f.frame_id).collect(), text))
}

struct WebSearch(FunctionSpec);

impl WebSearch {
    fn new() -> Self {
        WebSearch(FunctionSpec::new(
            WEB_SEARCH,
            "Search web for unfamiliar terms in user query.",
            &[("term", "term to look up", true)],
        ))
    }
}

impl AgentFunction for WebSearch {
    fn spec(&self) -> &FunctionSpec {
        &self.0
    }

    fn execute(&self, args: &Arguments, ctx: &FunctionContext<'_>) -> Result<FunctionOutput, AgentError> {
        let term = str_arg(args, &["term", "query"]).ok_or_else(|| bad_args(WEB_SEARCH, "missing `term`"))?;
        let (snippets, note) = fn_web_search(term, ctx.search, ctx.config.snippet_limit);
        Ok(FunctionOutput::WebSnippets { snippets, note })
    }
}

/// At most `limit` snippets. Provider failures become a note, never an error.
pub fn fn_web_search(term: &str, provider: &dyn SearchProvider, limit: usize) -> (Vec<String>, Option<String>) {
    match provider.search(term, limit) {
        Ok(mut snippets) => {
            snippets.truncate(limit);
            (snippets, None)
        }
        Err(e) => (Vec::new(), Some(e.to_string())),
    }
}

struct MultiHop(FunctionSpec);

impl MultiHop {
    fn new() -> Self {
        MultiHop(FunctionSpec::new(
            MULTI_HOP,
            "Break down a complex question into a sequence of simpler sub-queries, retrieve for each, and aggregate the results.",
            &[],
        ))
    }
}

impl AgentFunction for MultiHop {
    fn spec(&self) -> &FunctionSpec {
        &self.0
    }

    fn execute(&self, _args: &Arguments, ctx: &FunctionContext<'_>) -> Result<FunctionOutput, AgentError> {
        let (queries, note) = fn_multi_hop(ctx.query, ctx.summary, ctx.backend)?;
        Ok(FunctionOutput::SubQueries { queries, note })
    }
}

/// Two to four sub-queries, or the query alone. A malformed reply falls back
/// to a single hop and returns a warning.
pub fn fn_multi_hop(
    query: &str,
    summary: &GlobalSummary,
    backend: &dyn Backend,
) -> Result<(Vec<String>, Option<String>), AgentError> {
    let text = format!("Question: {query}\n\nVideo summary:\n{}", summary.digest());
    let reply = chat_text(backend, &ChatRequest::new(MULTI_HOP_SYSTEM_PROMPT, vec![Part::text(text)]))?;
    let parsed: Option<Vec<String>> = bracketed(&reply, '[', ']')
        .and_then(|json| serde_json::from_str::<Vec<String>>(json).ok())
        .map(|qs| qs.into_iter().map(|q| q.trim().to_string()).filter(|q| !q.is_empty()).collect());
    match parsed {
        Some(qs) if (1..=4).contains(&qs.len()) => Ok((qs, None)),
        Some(mut qs) if qs.len() > 4 => {
            qs.truncate(4);
            Ok((qs, Some(String::from("decomposition longer than 4 sub-queries, truncated"))))
        }
        _ => Ok((vec![query.to_string()], Some(format!("could not parse decomposition `{reply}`, using a single hop")))),
    }
}

// ------------------------------------------------------- refine / retrieve

/// Builds the refined query: the latest expansion (or the original question)
/// as retrieval text, every other output as a labeled context fragment.
pub fn refine(input: &AgentInput<'_>, calls: &[FunctionCallRecord], backend: &dyn Backend) -> Result<RefinedQuery, AgentError> {
    let mut refined_text = input.query.to_string();
    let mut fragments = Vec::new();
    let mut anchors = Vec::new();
    let mut sub_query_texts: Vec<String> = Vec::new();
    for call in calls {
        match &call.output {
            FunctionOutput::ExpandedQuery { text } => refined_text = text.clone(),
            other => {
                if let FunctionOutput::TemporalAnchors { anchors: found } = other {
                    anchors.extend(found.iter().cloned());
                }
                if let FunctionOutput::SubQueries { queries, .. } = other {
                    sub_query_texts = queries.clone();
                }
                fragments.push(format!("{}: {}", call.function_name, other.render()));
            }
        }
    }
    let embedding = backend.embed_text(&refined_text)?.normalized()?;
    let mut sub_queries = Vec::with_capacity(sub_query_texts.len());
    for text in sub_query_texts {
        // the question itself as a hop retrieves with the refined text
        let text = if text == input.query { refined_text.clone() } else { text };
        let embedding = if text == refined_text { embedding.clone() } else { backend.embed_text(&text)?.normalized()? };
        sub_queries.push(SubQuery { text, embedding });
    }
    Ok(RefinedQuery {
        original: input.query.to_string(),
        refined_text,
        context_fragments: fragments,
        anchors,
        sub_queries,
        embedding,
    })
}

/// Local context for the refined query. Fails when the video has no frames
/// or no transcript segments indexed.
pub fn retrieve_local_context(
    refined: &RefinedQuery,
    index: &EmbeddingIndex,
    asset: &VideoAsset,
    n: usize,
) -> Result<LocalContext, AgentError> {
    for kind in [ItemKind::Frame, ItemKind::Transcript] {
        if index.count(&asset.video_id, kind) == 0 {
            return Err(EmbeddingError::EmptyIndexForKind { video_id: asset.video_id.clone(), kind }.into());
        }
    }
    retrieve_available_context(refined, index, asset, n)
}

/// Like [`retrieve_local_context`] but degrades to whichever kinds are indexed.
pub fn retrieve_available_context(
    refined: &RefinedQuery,
    index: &EmbeddingIndex,
    asset: &VideoAsset,
    n: usize,
) -> Result<LocalContext, AgentError> {
    let probes: Vec<&EmbeddingVector> = if refined.sub_queries.is_empty() {
        vec![&refined.embedding]
    } else {
        refined.sub_queries.iter().map(|s| &s.embedding).collect()
    };
    let video_id = asset.video_id.as_str();
    let mut retrievals = Vec::with_capacity(probes.len());
    let mut frame_ids = BTreeSet::new();
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for probe in probes {
        let result = index.retrieve(probe, n, video_id)?;
        if let Some(i_star) = result.top_frame {
            frame_ids.extend(index.local_frame_window(i_star, video_id)?);
        }
        for hit in &result.transcripts {
            let slot = best.entry(hit.ordinal).or_insert(hit.score);
            if hit.score > *slot {
                *slot = hit.score;
            }
        }
        retrievals.push(result);
    }
    let mut hits: Vec<Hit> = best.into_iter().map(|(ordinal, score)| Hit { ordinal, score }).collect();
    hits.sort_by(rank_order);
    Ok(LocalContext {
        frames: frame_ids.into_iter().filter_map(|i| asset.frame(i).cloned()).collect(),
        transcripts: hits
            .into_iter()
            .filter_map(|h| asset.segment(h.ordinal).map(|s| ScoredSegment { segment: s.clone(), score: h.score }))
            .collect(),
        anchors: refined.anchors.clone(),
        retrievals,
    })
}

/// Everything one agent pass needs besides its input.
pub struct AgentEnv<'a> {
    pub registry: &'a FunctionRegistry,
    pub asset: &'a VideoAsset,
    pub index: &'a EmbeddingIndex,
    pub backend: &'a dyn Backend,
    pub search: &'a dyn SearchProvider,
    pub config: &'a AgentConfig,
    pub clock: &'a dyn Clock,
}

/// Plan, run the planned functions, refine, retrieve.
///
/// A function that fails records a note in its place and the pass continues.
pub fn run_agent(input: &AgentInput<'_>, env: &AgentEnv<'_>) -> Result<AgentPass, AgentError> {
    let plan = plan_functions(input, env.registry, env.backend, env.config)?;
    let mut warnings = plan.warnings.clone();
    let ctx = FunctionContext {
        query: input.query,
        summary: input.summary,
        asset: env.asset,
        index: env.index,
        backend: env.backend,
        search: env.search,
        config: env.config,
    };
    let mut calls = Vec::with_capacity(plan.calls.len());
    for planned in &plan.calls {
        let function = env
            .registry
            .get(&planned.function_name)
            .ok_or_else(|| AgentError::UnknownFunction(planned.function_name.clone()))?;
        let started = env.clock.now_ms();
        let output = match function.execute(&planned.arguments, &ctx) {
            Ok(output) => output,
            Err(AgentError::Backend(e)) => return Err(AgentError::Backend(e)),
            Err(e) => {
                warnings.push(format!("{}: {e}", planned.function_name));
                FunctionOutput::Note { text: e.to_string() }
            }
        };
        calls.push(FunctionCallRecord {
            function_name: planned.function_name.clone(),
            arguments: planned.arguments.clone(),
            output,
            duration_ms: env.clock.now_ms().saturating_sub(started),
        });
    }
    let refined = refine(input, &calls, env.backend)?;
    let local = retrieve_available_context(&refined, env.index, env.asset, env.config.top_n)?;
    Ok(AgentPass { plan: plan.calls, calls, refined, local, warnings })
}
