//! Question answering: the retrieval baseline, the agent loop with rethink,
//! and the four ablation variants.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    run_agent, AgentConfig, AgentEnv, AgentError, AgentInput, FunctionCallRecord, FunctionRegistry, LocalContext,
    PlannedCall, RefinedQuery, ScoredSegment, SearchProvider,
};
use crate::backend::{Backend, BackendError, CallMeter, ChatRequest, Part};
use crate::clock::Clock;
use crate::embedding::{EmbeddingError, EmbeddingIndex};
use crate::eval::Category;
use crate::rethink::{assess, RethinkError, RethinkInput, RethinkInstruction, Verdict};
use crate::summary::GlobalSummary;
use crate::transcript::VideoAsset;

/// Text of the sixth option appended to every question.
pub const INSUFFICIENT_OPTION: &str = "Not enough information to answer.";
pub const INSUFFICIENT_LABEL: u8 = 6;
pub const LABEL_REPROMPT: &str = "Respond with a single digit 1-6.";
pub const DEFAULT_RETHINK_CAP: usize = 3;

const ANSWER_SYSTEM_PROMPT: &str = "You answer multiple-choice questions about a video from the evidence provided: \
a summary, transcript excerpts with timestamps and frames with timestamps. Output only a single option label, one \
digit from 1 to 6. Choose 6 when the evidence is not enough to answer.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuestionError {
    #[error("expected 5 options, got {0}")]
    WrongOptionCount(usize),
    #[error("gold index {0} is outside 1..5")]
    BadGoldIndex(i64),
    #[error("question text is empty")]
    EmptyText,
    #[error("video id is empty")]
    EmptyVideoId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub text: String,
    /// Five dataset options plus [`INSUFFICIENT_OPTION`].
    pub options: Vec<String>,
    /// 1..=5; absent for ad-hoc questions.
    pub gold_index: Option<u8>,
    pub video_id: String,
    pub category: Category,
}

impl Question {
    pub fn new(
        question_id: impl Into<String>,
        text: impl Into<String>,
        options: Vec<String>,
        gold_index: i64,
        video_id: impl Into<String>,
        category: Category,
    ) -> Result<Self, QuestionError> {
        if !(1..=5).contains(&gold_index) {
            return Err(QuestionError::BadGoldIndex(gold_index));
        }
        let mut q = Self::unscored(question_id, text, options, video_id, category)?;
        q.gold_index = Some(gold_index as u8);
        Ok(q)
    }

    /// A question with no known answer, as asked from the command line.
    pub fn unscored(
        question_id: impl Into<String>,
        text: impl Into<String>,
        mut options: Vec<String>,
        video_id: impl Into<String>,
        category: Category,
    ) -> Result<Self, QuestionError> {
        let text = text.into();
        let video_id = video_id.into();
        if options.len() != 5 {
            return Err(QuestionError::WrongOptionCount(options.len()));
        }
        if text.trim().is_empty() {
            return Err(QuestionError::EmptyText);
        }
        if video_id.is_empty() {
            return Err(QuestionError::EmptyVideoId);
        }
        options.push(INSUFFICIENT_OPTION.to_string());
        Ok(Question { question_id: question_id.into(), text, options, gold_index: None, video_id, category })
    }

    pub fn option(&self, label: u8) -> Option<&str> {
        self.options.get((label as usize).checked_sub(1)?).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub chosen_index: u8,
    pub raw_text: String,
    /// Answer pass that produced it, from 0.
    pub iteration: usize,
    /// Hex SHA-256 of the rendered prompt that produced `raw_text`.
    pub prompt_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Variant {
    Baseline,
    PlusSummary,
    PlusAgent,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::PlusSummary, Variant::PlusAgent, Variant::Full];

    pub fn id(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::PlusSummary => "+summary",
            Variant::PlusAgent => "+agent",
            Variant::Full => "full",
        }
    }

    /// Row label in reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::PlusSummary => "+ Global Summary",
            Variant::PlusAgent => "+ Pre-Retrieval Agent",
            Variant::Full => "+ Rethink (full)",
        }
    }

    pub fn uses_summary(self) -> bool {
        self != Variant::Baseline
    }
}

impl core::fmt::Display for Variant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown variant `{0}` (expected baseline, +summary, +agent or full)")]
pub struct UnknownVariant(pub String);

impl FromStr for Variant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Variant::ALL
            .into_iter()
            .find(|v| v.id().eq_ignore_ascii_case(s) || v.id().trim_start_matches('+').eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownVariant(s.to_string()))
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.id().to_string()
    }
}

impl TryFrom<String> for Variant {
    type Error = UnknownVariant;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum RethinkStep {
    /// The variant has no rethink stage.
    NotRun,
    /// Final pass of a capped loop.
    CapReached,
    Adequate { raw_text: String },
    Inadequate { instruction: RethinkInstruction, raw_text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub plan: Vec<PlannedCall>,
    pub calls: Vec<FunctionCallRecord>,
    pub refined: Option<RefinedQuery>,
    pub local: LocalContext,
    pub answer: AnswerRecord,
    pub rethink: RethinkStep,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub question_id: String,
    pub video_id: String,
    pub variant: Variant,
    pub summary_used: bool,
    pub iterations: Vec<IterationTrace>,
    pub final_answer: AnswerRecord,
    pub wall_time_ms: u64,
    /// Chat calls made for this question.
    pub backend_call_count: u64,
    pub embed_call_count: u64,
}

impl AgentTrace {
    pub fn rethink_instructions(&self) -> impl Iterator<Item = &RethinkInstruction> {
        self.iterations.iter().filter_map(|it| match &it.rethink {
            RethinkStep::Inadequate { instruction, .. } => Some(instruction),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QaError {
    #[error("answer `{raw}` is not a single digit 1-6 (pass {iteration})")]
    LabelParseFailure { raw: String, iteration: usize, chat_calls: u64 },
    #[error("variant {variant} needs the {component}")]
    MissingComponentForVariant { variant: Variant, component: &'static str },
    #[error("question is about `{question}`, asset is `{asset}`")]
    VideoMismatch { question: String, asset: String },
    #[error("pass {iteration}: agent: {source}")]
    Agent { iteration: usize, source: AgentError },
    #[error("pass {iteration}: rethink: {source}")]
    Rethink { iteration: usize, source: RethinkError },
    #[error("pass {iteration}: backend: {source}")]
    Backend { iteration: usize, source: BackendError },
    #[error("pass {iteration}: retrieval: {source}")]
    Embedding { iteration: usize, source: EmbeddingError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaConfig {
    /// Rethink passes allowed after the first answer.
    pub rethink_cap: usize,
    pub agent: AgentConfig,
}

impl Default for QaConfig {
    fn default() -> Self {
        QaConfig { rethink_cap: DEFAULT_RETHINK_CAP, agent: AgentConfig::default() }
    }
}

/// Shared, read-only state for answering questions about one video.
pub struct QaEnv<'a> {
    pub asset: &'a VideoAsset,
    pub index: &'a EmbeddingIndex,
    pub summary: Option<&'a GlobalSummary>,
    pub backend: &'a dyn Backend,
    pub registry: &'a FunctionRegistry,
    pub search: &'a dyn SearchProvider,
    pub clock: &'a dyn Clock,
    pub config: &'a QaConfig,
}

/// Accepts one digit 1-6 with optional surrounding whitespace, nothing else.
pub fn parse_answer_label(raw: &str) -> Option<u8> {
    match raw.trim().as_bytes() {
        [d @ b'1'..=b'6'] => Some(d - b'0'),
        _ => None,
    }
}

/// The answer prompt: summary digest, question and refined query, agent
/// findings, transcript excerpts, frames, options.
pub fn render_answer_prompt(
    question: &Question,
    summary: Option<&GlobalSummary>,
    refined: Option<&RefinedQuery>,
    local: &LocalContext,
    images: bool,
) -> ChatRequest {
    let mut parts = Vec::new();
    if let Some(summary) = summary {
        parts.push(Part::text(format!("Video summary:\n{}", summary.digest().trim_end())));
    }
    let mut q = format!("Question: {}", question.text);
    if let Some(refined) = refined {
        if refined.refined_text != question.text {
            let _ = write!(q, "\nRefined query: {}", refined.refined_text);
        }
    }
    parts.push(Part::text(q));
    if let Some(refined) = refined.filter(|r| !r.context_fragments.is_empty()) {
        let mut text = String::from("Agent findings:");
        for f in &refined.context_fragments {
            let _ = write!(text, "\n- {f}");
        }
        parts.push(Part::text(text));
    }
    if !local.transcripts.is_empty() {
        let mut text = String::from("Transcript excerpts:");
        for ScoredSegment { segment, .. } in &local.transcripts {
            let _ = write!(text, "\n[{} - {}] {}", segment.start, segment.end, segment.text);
        }
        parts.push(Part::text(text));
    }
    for f in &local.frames {
        parts.push(Part::text(format!("Frame {} at {}", f.frame_id, f.timestamp)));
        if images {
            parts.push(Part::image(f.image_ref.clone()));
        }
    }
    let mut text = String::from("Options:");
    for (i, o) in question.options.iter().enumerate() {
        let _ = write!(text, "\n{}. {o}", i + 1);
    }
    parts.push(Part::text(text));
    ChatRequest::new(ANSWER_SYSTEM_PROMPT, parts).with_max_output_tokens(8)
}

fn ask_for_label(
    request: &ChatRequest,
    backend: &CallMeter<&dyn Backend>,
    iteration: usize,
) -> Result<AnswerRecord, QaError> {
    let backend_err = |source| QaError::Backend { iteration, source };
    let raw = backend.chat(request).map_err(backend_err)?.text;
    if let Some(label) = parse_answer_label(&raw) {
        return Ok(AnswerRecord { chosen_index: label, raw_text: raw, iteration, prompt_digest: request.digest() });
    }
    let mut retry = request.clone();
    retry.user_parts.push(Part::text(LABEL_REPROMPT));
    let raw = backend.chat(&retry).map_err(backend_err)?.text;
    match parse_answer_label(&raw) {
        Some(label) => Ok(AnswerRecord { chosen_index: label, raw_text: raw, iteration, prompt_digest: retry.digest() }),
        None => Err(QaError::LabelParseFailure { raw, iteration, chat_calls: backend.chat_calls() }),
    }
}

fn check_video(question: &Question, env: &QaEnv<'_>) -> Result<(), QaError> {
    if question.video_id != env.asset.video_id {
        return Err(QaError::VideoMismatch { question: question.video_id.clone(), asset: env.asset.video_id.clone() });
    }
    Ok(())
}

/// Direct retrieval with the raw question: top-n frames and transcript
/// segments, one answer call. With `summary` set the digest leads the prompt.
pub fn answer_baseline(
    question: &Question,
    env: &QaEnv<'_>,
    summary: Option<&GlobalSummary>,
) -> Result<(AnswerRecord, AgentTrace), QaError> {
    check_video(question, env)?;
    let started = env.clock.now_ms();
    let meter = CallMeter::new(env.backend);
    let n = env.config.agent.top_n;
    let video_id = env.asset.video_id.as_str();
    let query = meter.embed_text(&question.text).map_err(|source| QaError::Backend { iteration: 0, source })?;
    let retrieval = env.index.retrieve(&query, n, video_id).map_err(|source| QaError::Embedding { iteration: 0, source })?;
    let mut frame_ids = retrieval.frame_ids();
    frame_ids.sort_unstable();
    let local = LocalContext {
        frames: frame_ids.iter().filter_map(|&i| env.asset.frame(i).cloned()).collect(),
        transcripts: retrieval
            .transcripts
            .iter()
            .filter_map(|h| env.asset.segment(h.ordinal).map(|s| ScoredSegment { segment: s.clone(), score: h.score }))
            .collect(),
        anchors: Vec::new(),
        retrievals: vec![retrieval],
    };
    let request = render_answer_prompt(question, summary, None, &local, env.backend.profile().supports_images);
    let answer = ask_for_label(&request, &meter, 0)?;
    let variant = if summary.is_some() { Variant::PlusSummary } else { Variant::Baseline };
    let trace = AgentTrace {
        question_id: question.question_id.clone(),
        video_id: question.video_id.clone(),
        variant,
        summary_used: summary.is_some(),
        iterations: vec![IterationTrace {
            iteration: 0,
            plan: Vec::new(),
            calls: Vec::new(),
            refined: None,
            local,
            answer: answer.clone(),
            rethink: RethinkStep::NotRun,
            warnings: Vec::new(),
        }],
        final_answer: answer.clone(),
        wall_time_ms: env.clock.now_ms().saturating_sub(started),
        backend_call_count: meter.chat_calls(),
        embed_call_count: meter.embed_calls(),
    };
    Ok((answer, trace))
}

/// The agent loop: think, retrieve, answer, and while the critic finds the
/// answer inadequate and passes remain, think again with its instruction.
/// Runs at most `cap + 1` answer passes; the last pass is never assessed.
pub fn answer_agentic(question: &Question, env: &QaEnv<'_>, cap: usize) -> Result<(AnswerRecord, AgentTrace), QaError> {
    check_video(question, env)?;
    let variant = if cap == 0 { Variant::PlusAgent } else { Variant::Full };
    let summary = env.summary.ok_or(QaError::MissingComponentForVariant { variant, component: "global summary" })?;
    let started = env.clock.now_ms();
    let meter = CallMeter::new(env.backend);
    let images = env.backend.profile().supports_images;
    let agent_env = AgentEnv {
        registry: env.registry,
        asset: env.asset,
        index: env.index,
        backend: &meter,
        search: env.search,
        config: &env.config.agent,
        clock: env.clock,
    };
    let mut iterations: Vec<IterationTrace> = Vec::new();
    let mut instruction: Option<RethinkInstruction> = None;
    for pass in 0..=cap {
        let input = AgentInput { query: &question.text, summary, instruction: instruction.as_ref() };
        let agent = run_agent(&input, &agent_env).map_err(|source| QaError::Agent { iteration: pass, source })?;
        let request = render_answer_prompt(question, Some(summary), Some(&agent.refined), &agent.local, images);
        let answer = ask_for_label(&request, &meter, pass)?;
        let mut warnings = agent.warnings;
        let rethink = if pass == cap {
            if cap == 0 {
                RethinkStep::NotRun
            } else {
                RethinkStep::CapReached
            }
        } else {
            let rethink_input = RethinkInput {
                query: &question.text,
                options: &question.options,
                refined: &agent.refined,
                summary,
                local: &agent.local,
                answer: &answer,
            };
            let assessment = assess(&rethink_input, pass + 1, cap, env.registry, &meter)
                .map_err(|source| QaError::Rethink { iteration: pass, source })?;
            warnings.extend(assessment.warnings);
            match assessment.verdict {
                Verdict::Adequate => RethinkStep::Adequate { raw_text: assessment.raw_text },
                Verdict::Inadequate(next) => {
                    instruction = Some(next.clone());
                    RethinkStep::Inadequate { instruction: next, raw_text: assessment.raw_text }
                }
            }
        };
        let stop = !matches!(rethink, RethinkStep::Inadequate { .. });
        iterations.push(IterationTrace {
            iteration: pass,
            plan: agent.plan,
            calls: agent.calls,
            refined: Some(agent.refined),
            local: agent.local,
            answer,
            rethink,
            warnings,
        });
        if stop {
            break;
        }
    }
    let final_answer = iterations.last().map(|it| it.answer.clone()).expect("at least one pass runs");
    let trace = AgentTrace {
        question_id: question.question_id.clone(),
        video_id: question.video_id.clone(),
        variant,
        summary_used: true,
        iterations,
        final_answer: final_answer.clone(),
        wall_time_ms: env.clock.now_ms().saturating_sub(started),
        backend_call_count: meter.chat_calls(),
        embed_call_count: meter.embed_calls(),
    };
    Ok((final_answer, trace))
}

/// The full loop with the configured rethink cap.
pub fn answer_full(question: &Question, env: &QaEnv<'_>) -> Result<(AnswerRecord, AgentTrace), QaError> {
    let (answer, mut trace) = answer_agentic(question, env, env.config.rethink_cap)?;
    trace.variant = Variant::Full;
    Ok((answer, trace))
}

pub fn answer_with_variant(
    question: &Question,
    variant: Variant,
    env: &QaEnv<'_>,
) -> Result<(AnswerRecord, AgentTrace), QaError> {
    if variant.uses_summary() && env.summary.is_none() {
        return Err(QaError::MissingComponentForVariant { variant, component: "global summary" });
    }
    match variant {
        Variant::Baseline => answer_baseline(question, env, None),
        Variant::PlusSummary => answer_baseline(question, env, env.summary),
        Variant::PlusAgent => answer_agentic(question, env, 0),
        Variant::Full => answer_full(question, env),
    }
}
