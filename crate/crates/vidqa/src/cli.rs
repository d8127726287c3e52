//! Command-line interface: `ingest`, `summarize`, `ask`, `eval`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;
use vidqa_core::eval::{render_table, Category};
use vidqa_core::orchestrator::{AgentTrace, IterationTrace, Question, Variant};

use crate::config::{EngineConfig, Overrides};
use crate::eval_run::{load_dataset, run_eval, write_outputs};
use crate::pipeline::{Engine, FrameSource, PipelineError};
use crate::store::Store;

pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_LABEL_PARSE: i32 = 3;
pub const EXIT_MISSING_COMPONENT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "vidqa", version, about = "Agentic multiple-choice question answering over long videos")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Store directory holding one folder per video.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Backend profile name from the configuration.
    #[arg(long = "backend-profile", global = true)]
    pub backend_profile: Option<String>,
    /// Seed for the mock backend's embeddings.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn parse_category(s: &str) -> Result<Category, String> {
    s.parse::<Category>().map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, align and embed a video's transcript and frames.
    Ingest {
        video_id: String,
        /// WEBVTT transcript.
        #[arg(long, conflicts_with = "no_transcript")]
        vtt: Option<PathBuf>,
        /// The video has no speech.
        #[arg(long)]
        no_transcript: bool,
        /// Frame manifest (JSON lines with timestamp_ms and image_ref).
        #[arg(long, conflicts_with_all = ["extract", "no_frames"])]
        frames: Option<PathBuf>,
        /// Video file to sample frames from with the configured extractor.
        #[arg(long, conflicts_with = "no_frames")]
        extract: Option<PathBuf>,
        /// The video has no frames to index.
        #[arg(long)]
        no_frames: bool,
        /// Replace an existing ingest.
        #[arg(long)]
        force: bool,
    },
    /// Build or reuse the cached global summary.
    Summarize { video_id: String },
    /// Answer one multiple-choice question.
    Ask {
        video_id: String,
        question: String,
        /// The five answer options.
        #[arg(long, num_args = 5, required = true)]
        options: Vec<String>,
        #[arg(long, default_value = "full", value_parser = parse_variant)]
        variant: Variant,
        #[arg(long, default_value = "Temporal", value_parser = parse_category)]
        category: Category,
        /// Trace file; defaults to the video's traces folder.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a question set under one or more variants.
    Eval {
        /// JSON-lines dataset.
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "baseline,+summary,+agent,full", value_parser = parse_variant)]
        variants: Vec<Variant>,
        /// Output directory for the reports.
        #[arg(long, default_value = "vidqa-eval")]
        out: PathBuf,
        /// Worker threads; 0 uses every CPU.
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Serialize)]
struct TraceLine<'a> {
    question_id: &'a str,
    video_id: &'a str,
    variant: Variant,
    #[serde(flatten)]
    iteration: &'a IterationTrace,
    is_final: bool,
    wall_time_ms: u64,
    backend_call_count: u64,
}

/// One line per answer pass.
pub fn trace_lines(trace: &AgentTrace) -> Vec<String> {
    let last = trace.iterations.len().saturating_sub(1);
    trace
        .iterations
        .iter()
        .enumerate()
        .map(|(i, it)| {
            serde_json::to_string(&TraceLine {
                question_id: &trace.question_id,
                video_id: &trace.video_id,
                variant: trace.variant,
                iteration: it,
                is_final: i == last,
                wall_time_ms: trace.wall_time_ms,
                backend_call_count: trace.backend_call_count,
            })
            .expect("trace serializes")
        })
        .collect()
}

/// Stable id for an ad-hoc question: CRC-32 of its text and options.
pub fn ask_question_id(question: &str, options: &[String]) -> String {
    let mut h = crc32fast::Hasher::new();
    h.update(question.as_bytes());
    for o in options {
        h.update(&[0]);
        h.update(o.as_bytes());
    }
    format!("ask-{:08x}", h.finalize())
}

/// Runs the CLI. Returns the process exit code.
pub fn run<I, T>(args: I, env: &dyn Fn(&str) -> Option<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match execute(cli, env, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, env: &dyn Fn(&str) -> Option<String>, out: &mut dyn Write) -> Result<(), PipelineError> {
    let overrides = Overrides {
        config: cli.config,
        store_dir: cli.store,
        backend_profile: cli.backend_profile,
        seed: cli.seed,
    };
    let mut config = EngineConfig::resolve(&overrides, env)?;
    if let Command::Eval { threads: Some(t), .. } = &cli.command {
        config.threads = *t;
    }
    let engine = Engine::new(config)?;
    let w = |e: std::io::Error| PipelineError::Io { path: "<stdout>".into(), source: e };
    match cli.command {
        Command::Ingest { video_id, vtt, no_transcript, frames, extract, no_frames, force } => {
            if vtt.is_none() && !no_transcript {
                return Err(PipelineError::NoTranscript);
            }
            let source = match (frames, extract, no_frames) {
                (Some(m), _, _) => FrameSource::Manifest(m),
                (_, Some(v), _) => FrameSource::Extract(v),
                (_, _, true) => FrameSource::None,
                _ => return Err(PipelineError::NoFrameSource),
            };
            let r = engine.ingest(&video_id, vtt.as_deref(), source, force)?;
            writeln!(
                out,
                "Ingested {}: {} segments, {} frames ({} inside a segment), duration {}",
                r.video_id, r.segments, r.frames, r.aligned_frames, r.duration
            )
            .map_err(w)?;
            writeln!(out, "Index: {}", engine.store.index_path(&video_id).display()).map_err(w)?;
        }
        Command::Summarize { video_id } => {
            let r = engine.summarize(&video_id)?;
            let (start, end) = r.summary.time_span().unwrap_or_default();
            writeln!(out, "Summary for {video_id}: {} clusters, {start} - {end}", r.summary.clusters.len()).map_err(w)?;
            if r.cached {
                writeln!(out, "cached, 0 backend calls").map_err(w)?;
            } else {
                let plural = if r.backend_calls == 1 { "" } else { "s" };
                writeln!(out, "{} backend call{plural}", r.backend_calls).map_err(w)?;
            }
            for warning in &r.warnings {
                log::warn!("{warning}");
            }
        }
        Command::Ask { video_id, question, options, variant, category, trace } => {
            let id = ask_question_id(&question, &options);
            let q = Question::unscored(id.clone(), question, options, video_id.clone(), category)
                .map_err(|e| PipelineError::Io { path: "question".into(), source: std::io::Error::other(e) })?;
            let (answer, agent_trace) = engine.ask(&q, variant)?;
            let path = trace.unwrap_or_else(|| engine.store.traces_dir(&video_id).join(format!("{id}-{}.jsonl", variant_slug(variant))));
            let lines = trace_lines(&agent_trace);
            let values: Vec<serde_json::Value> =
                lines.iter().map(|l| serde_json::from_str(l).expect("own output parses")).collect();
            Store::write_jsonl(&path, &values)?;
            let text = q.option(answer.chosen_index).unwrap_or("");
            writeln!(out, "Answer: {} \u{2014} {text}", answer.chosen_index).map_err(w)?;
            writeln!(out, "Trace: {}", path.display()).map_err(w)?;
        }
        Command::Eval { dataset, variants, out: out_dir, .. } => {
            let questions = load_dataset(&dataset, &engine.store)?;
            let run = run_eval(&engine, &questions, &variants)?;
            write_outputs(&run, &out_dir)?;
            write!(out, "{}", render_table(&run.report)).map_err(w)?;
            let failed = run.records.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                writeln!(out, "{failed} cells failed; see records.jsonl").map_err(w)?;
            }
            writeln!(out, "Reports: {}", out_dir.display()).map_err(w)?;
        }
    }
    Ok(())
}

fn variant_slug(v: Variant) -> &'static str {
    match v {
        Variant::Baseline => "baseline",
        Variant::PlusSummary => "summary",
        Variant::PlusAgent => "agent",
        Variant::Full => "full",
    }
}
