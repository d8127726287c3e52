//! Answer critic: judges whether an answer rests on enough evidence and, when
//! it does not, tells the agent what to look for next.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{FunctionRegistry, LocalContext, RefinedQuery};
use crate::backend::{chat_text, Backend, BackendError, ChatRequest, Part};
use crate::orchestrator::{AnswerRecord, INSUFFICIENT_LABEL};
use crate::summary::GlobalSummary;

const VERDICT_SYSTEM_PROMPT: &str = "You review answers to multiple-choice questions about a video. Decide whether the \
retrieved evidence was enough to support the chosen answer. If it was not, say what is missing and what the retrieval \
agent should look for next, and name the functions it should call.";

const VERDICT_FORMAT: &str = "Reply with exactly these lines:\n\
VERDICT: adequate or inadequate\n\
DIAGNOSIS: the gap in the evidence\n\
DIRECTIVE: what to retrieve or refine next\n\
FUNCTIONS: comma-separated function names, or none";

const FALLBACK_DIAGNOSIS: &str = "the answer selected the not-enough-information option";
const FALLBACK_DIRECTIVE: &str = "locate the moment the question refers to and retrieve its frames and transcript";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RethinkInstruction {
    pub diagnosis: String,
    pub directive: String,
    pub suggested_functions: Vec<String>,
    /// 1 for the first rethink of a question.
    pub iteration: usize,
}

/// Everything the critic looks at.
pub struct RethinkInput<'a> {
    pub query: &'a str,
    pub options: &'a [String],
    pub refined: &'a RefinedQuery,
    pub summary: &'a GlobalSummary,
    pub local: &'a LocalContext,
    pub answer: &'a AnswerRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Adequate,
    Inadequate(RethinkInstruction),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assessment {
    pub verdict: Verdict,
    pub raw_text: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RethinkError {
    #[error("rethink iteration {iteration} exceeds the cap {cap}")]
    IterationCapExceeded { iteration: usize, cap: usize },
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
}

pub fn render_verdict_prompt(input: &RethinkInput<'_>, iteration: usize, registry: &FunctionRegistry) -> ChatRequest {
    let mut text = format!("Iteration: {iteration}\nQuestion: {}\n", input.query);
    if input.refined.refined_text != input.query {
        let _ = writeln!(text, "Refined query: {}", input.refined.refined_text);
    }
    if !input.refined.context_fragments.is_empty() {
        text.push_str("Agent findings:\n");
        for f in &input.refined.context_fragments {
            let _ = writeln!(text, "- {f}");
        }
    }
    let _ = write!(text, "\nVideo summary:\n{}\nRetrieved transcript:\n", input.summary.digest());
    for s in &input.local.transcripts {
        let _ = writeln!(text, "[{} - {}] {}", s.segment.start, s.segment.end, s.segment.text);
    }
    text.push_str("Retrieved frames:");
    for f in &input.local.frames {
        let _ = write!(text, " {} ({})", f.frame_id, f.timestamp);
    }
    text.push_str("\n\nOptions:\n");
    for (i, o) in input.options.iter().enumerate() {
        let _ = writeln!(text, "{}. {o}", i + 1);
    }
    let chosen = input.answer.chosen_index as usize;
    let chosen_text = input.options.get(chosen.wrapping_sub(1)).map_or("", String::as_str);
    let _ = writeln!(text, "Chosen answer: {chosen}. {chosen_text}");
    text.push_str("\nAvailable functions: ");
    let names: Vec<&str> = registry.names().collect();
    text.push_str(&names.join(", "));
    ChatRequest::new(VERDICT_SYSTEM_PROMPT, vec![Part::text(text), Part::text(VERDICT_FORMAT)])
}

#[derive(Debug, Default)]
struct VerdictFields {
    verdict: Option<bool>,
    diagnosis: String,
    directive: String,
    functions: Vec<String>,
}

fn verdict_word(s: &str) -> Option<bool> {
    let s = s.trim().trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    if s.starts_with("inadequate") || s.starts_with("not adequate") {
        Some(false)
    } else if s.starts_with("adequate") {
        Some(true)
    } else {
        None
    }
}

fn read_fields(text: &str, registry: &FunctionRegistry) -> VerdictFields {
    let mut fields = VerdictFields::default();
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['-', '*', '#', ' ']);
        let Some((label, value)) = line.split_once(':') else {
            continue;
        };
        let label = label.trim().trim_matches('*').trim().to_lowercase();
        let value = value.trim().trim_matches('*').trim();
        match label.as_str() {
            "verdict" => fields.verdict = verdict_word(value),
            "diagnosis" => fields.diagnosis = value.to_string(),
            "directive" | "instruction" => fields.directive = value.to_string(),
            "functions" | "suggested functions" => {
                fields.functions = value
                    .split(',')
                    .map(|f| f.trim().trim_matches('`').to_string())
                    .filter(|f| registry.get(f).is_some())
                    .collect();
            }
            _ => {}
        }
    }
    if fields.verdict.is_none() {
        fields.verdict = verdict_word(text.lines().next().unwrap_or(""));
    }
    fields
}

/// Judges one answer. `iteration` is the number this rethink would carry.
///
/// An answer of the insufficiency option is always inadequate; the chat call
/// then only supplies the directive. Any other answer whose verdict cannot
/// be read counts as adequate, so a confused critic ends the loop.
pub fn assess(
    input: &RethinkInput<'_>,
    iteration: usize,
    cap: usize,
    registry: &FunctionRegistry,
    backend: &dyn Backend,
) -> Result<Assessment, RethinkError> {
    if iteration == 0 || iteration > cap {
        return Err(RethinkError::IterationCapExceeded { iteration, cap });
    }
    let request = render_verdict_prompt(input, iteration, registry);
    let raw_text = chat_text(backend, &request)?;
    let fields = read_fields(&raw_text, registry);
    let forced = input.answer.chosen_index == INSUFFICIENT_LABEL;
    let mut warnings = Vec::new();
    let inadequate = match fields.verdict {
        Some(adequate) => forced || !adequate,
        None if forced => true,
        None => {
            warnings.push(format!("unreadable verdict, treated as adequate: `{raw_text}`"));
            false
        }
    };
    if !inadequate {
        return Ok(Assessment { verdict: Verdict::Adequate, raw_text, warnings });
    }
    let VerdictFields { mut diagnosis, mut directive, functions, .. } = fields;
    if directive.is_empty() {
        directive = diagnosis.clone();
    }
    if directive.is_empty() {
        warnings.push(String::from("verdict gave no directive, using the default one"));
        diagnosis = FALLBACK_DIAGNOSIS.to_string();
        directive = FALLBACK_DIRECTIVE.to_string();
    }
    let instruction = RethinkInstruction { diagnosis, directive, suggested_functions: functions, iteration };
    Ok(Assessment { verdict: Verdict::Inadequate(instruction), raw_text, warnings })
}
