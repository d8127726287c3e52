//! Runs every (question, variant) cell and writes the reports.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use vidqa_core::eval::{aggregate, audit, parse_dataset, render_table, sort_records, EvalRecord, EvalReport};
use vidqa_core::orchestrator::{answer_with_variant, AgentTrace, QaEnv, QaError, Question, Variant};
use vidqa_core::summary::GlobalSummary;
use vidqa_core::{EmbeddingIndex, VideoAsset};

use crate::pipeline::{Engine, PipelineError};
use crate::store::Store;

pub struct EvalRun {
    pub report: EvalReport,
    /// Sorted by (variant, question id).
    pub records: Vec<EvalRecord>,
    /// Same order as `records`; failed cells have none.
    pub traces: Vec<AgentTrace>,
}

/// Reads a dataset file and checks every referenced video is ingested.
pub fn load_dataset(path: &Path, store: &Store) -> Result<Vec<Question>, PipelineError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
    let questions = parse_dataset(&text)?;
    for q in &questions {
        if !store.is_ingested(&q.video_id) {
            return Err(PipelineError::MissingVideo { question_id: q.question_id.clone(), video_id: q.video_id.clone() });
        }
    }
    Ok(questions)
}

struct VideoContext {
    asset: VideoAsset,
    index: EmbeddingIndex,
    summary: Option<GlobalSummary>,
}

fn error_record(question: &Question, variant: Variant, error: &QaError) -> EvalRecord {
    let (calls, chosen) = match error {
        QaError::LabelParseFailure { chat_calls, .. } => (*chat_calls, 0),
        _ => (0, 0),
    };
    let mut r = EvalRecord::new(question, variant, chosen, 0, calls);
    r.error = Some(error.to_string());
    r
}

/// Answers every question under every variant in parallel. A failing cell
/// is scored incorrect and logged; the run fails only if every cell fails.
pub fn run_eval(engine: &Engine, questions: &[Question], variants: &[Variant]) -> Result<EvalRun, PipelineError> {
    let mut videos: BTreeMap<&str, VideoContext> = BTreeMap::new();
    let needs_summary = variants.iter().any(|v| v.uses_summary());
    for q in questions {
        if videos.contains_key(q.video_id.as_str()) {
            continue;
        }
        let summary = if needs_summary { Some(engine.summarize(&q.video_id)?.summary) } else { None };
        videos.insert(
            &q.video_id,
            VideoContext {
                asset: engine.store.load_asset(&q.video_id)?,
                index: engine.store.load_index(&q.video_id)?,
                summary,
            },
        );
    }
    let qa = engine.config.qa_config();
    let cells: Vec<(Variant, &Question)> = variants.iter().flat_map(|&v| questions.iter().map(move |q| (v, q))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(engine.config.threads)
        .build()
        .map_err(|e| PipelineError::Io { path: "thread pool".into(), source: std::io::Error::other(e) })?;
    let results: Vec<(EvalRecord, Option<AgentTrace>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(variant, question)| {
                let video = &videos[question.video_id.as_str()];
                let env = QaEnv {
                    asset: &video.asset,
                    index: &video.index,
                    summary: video.summary.as_ref(),
                    backend: engine.backend.as_ref(),
                    registry: &engine.registry,
                    search: engine.search.as_ref(),
                    clock: engine.clock.as_ref(),
                    config: &qa,
                };
                match answer_with_variant(question, variant, &env) {
                    Ok((answer, trace)) => {
                        let r = EvalRecord::new(question, variant, answer.chosen_index, trace.wall_time_ms, trace.backend_call_count);
                        (r, Some(trace))
                    }
                    Err(e) => {
                        log::warn!("{} / {variant}: {e}", question.question_id);
                        (error_record(question, variant, &e), None)
                    }
                }
            })
            .collect()
    });
    if !results.is_empty() && results.iter().all(|(r, _)| r.error.is_some()) {
        return Err(PipelineError::AllCellsFailed(results.len()));
    }
    let mut paired = results;
    paired.sort_by(|(a, _), (b, _)| a.variant.cmp(&b.variant).then_with(|| a.question_id.cmp(&b.question_id)));
    let (mut records, traces): (Vec<EvalRecord>, Vec<Option<AgentTrace>>) = paired.into_iter().unzip();
    sort_records(&mut records);
    let report = aggregate(&records, variants)?;
    audit(&report, &records)?;
    Ok(EvalRun { report, records, traces: traces.into_iter().flatten().collect() })
}

/// Writes `report.txt`, `report.json`, `records.jsonl` and `traces.jsonl`.
pub fn write_outputs(run: &EvalRun, dir: &Path) -> Result<(), PipelineError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| PipelineError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let txt = dir.join("report.txt");
    std::fs::write(&txt, render_table(&run.report)).map_err(io(&txt))?;
    let json = dir.join("report.json");
    let mut body = serde_json::to_string_pretty(&run.report)
        .map_err(|e| PipelineError::Io { path: json.display().to_string(), source: e.into() })?;
    body.push('\n');
    std::fs::write(&json, body).map_err(io(&json))?;
    Store::write_jsonl(&dir.join("records.jsonl"), &run.records)?;
    Store::write_jsonl(&dir.join("traces.jsonl"), &run.traces)?;
    Ok(())
}
