//! Scoring: per-category accuracy, macro-F1 over the six answer labels, and
//! the variant-by-category report.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{Question, QuestionError, Variant};

/// Number of answer labels, the five dataset options plus the insufficiency option.
pub const LABELS: usize = 6;

pub type ConfusionMatrix = [[u64; LABELS]; LABELS];

/// Question categories, in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Category {
    ThemeExploration,
    NarrativeAndPlotAnalysis,
    CharacterAndRelationshipDynamics,
    SettingAndTechnicalAnalysis,
    Temporal,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::ThemeExploration,
        Category::NarrativeAndPlotAnalysis,
        Category::CharacterAndRelationshipDynamics,
        Category::SettingAndTechnicalAnalysis,
        Category::Temporal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::ThemeExploration => "Theme Exploration",
            Category::NarrativeAndPlotAnalysis => "Narrative and Plot Analysis",
            Category::CharacterAndRelationshipDynamics => "Character and Relationship Dynamics",
            Category::SettingAndTechnicalAnalysis => "Setting and Technical Analysis",
            Category::Temporal => "Temporal",
        }
    }
}

impl core::fmt::Display for Category {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.split_whitespace().collect::<Vec<_>>().join(" ");
        Category::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(&wanted))
            .ok_or_else(|| EvalError::UnknownCategory(s.to_string()))
    }
}

impl From<Category> for String {
    fn from(c: Category) -> String {
        c.name().to_string()
    }
}

impl TryFrom<String> for Category {
    type Error = EvalError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no records to score")]
    EmptyRecordSet,
    #[error("unknown question category `{0}`")]
    UnknownCategory(String),
    #[error("line {line}: {source}")]
    Dataset { line: usize, source: QuestionError },
    #[error("line {line}: unreadable record: {reason}")]
    UnreadableRecord { line: usize, reason: String },
    #[error("line {line}: unknown question category `{category}`")]
    UnknownCategoryAt { line: usize, category: String },
    #[error("duplicate question id `{0}`")]
    DuplicateQuestionId(String),
    #[error("self-audit mismatch for {variant} / {category}: {what}")]
    AuditMismatch { variant: String, category: String, what: String },
}

/// One scored (question, variant) cell. `chosen_index` 0 marks an answer
/// that could not be parsed; it is always incorrect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub category: Category,
    pub variant: Variant,
    pub chosen_index: u8,
    pub gold_index: u8,
    pub correct: bool,
    pub wall_time_ms: u64,
    pub backend_call_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn new(question: &Question, variant: Variant, chosen_index: u8, wall_time_ms: u64, backend_call_count: u64) -> Self {
        EvalRecord {
            question_id: question.question_id.clone(),
            category: question.category,
            variant,
            chosen_index,
            gold_index: question.gold_index.unwrap_or(0),
            correct: chosen_index != 0 && Some(chosen_index) == question.gold_index,
            wall_time_ms,
            backend_call_count,
            error: None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawQuestion {
    #[serde(default)]
    question_id: Option<String>,
    question: String,
    options: Vec<String>,
    gold_index: i64,
    category: String,
    video_id: String,
}

/// Parses line-delimited question records. Blank lines are skipped; a
/// missing `question_id` becomes `q<line>`.
pub fn parse_dataset(text: &str) -> Result<Vec<Question>, EvalError> {
    let mut out: Vec<Question> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQuestion = serde_json::from_str(line)
            .map_err(|e| EvalError::UnreadableRecord { line: line_no, reason: e.to_string() })?;
        let category = raw
            .category
            .parse::<Category>()
            .map_err(|_| EvalError::UnknownCategoryAt { line: line_no, category: raw.category.clone() })?;
        let id = raw.question_id.unwrap_or_else(|| format!("q{line_no:04}"));
        if out.iter().any(|q| q.question_id == id) {
            return Err(EvalError::DuplicateQuestionId(id));
        }
        let question = Question::new(id, raw.question, raw.options, raw.gold_index, raw.video_id, category)
            .map_err(|source| EvalError::Dataset { line: line_no, source })?;
        out.push(question);
    }
    Ok(out)
}

/// Percent of records answered correctly.
pub fn accuracy(records: &[EvalRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecordSet);
    }
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(100.0 * correct as f64 / records.len() as f64)
}

/// Rows are gold labels, columns predicted labels. Unparsed answers are left
/// out of the matrix and counted per gold label in the second value.
pub fn confusion_matrix(records: &[EvalRecord]) -> (ConfusionMatrix, [u64; LABELS]) {
    let mut m = [[0u64; LABELS]; LABELS];
    let mut unparsed = [0u64; LABELS];
    for r in records.iter().filter(|r| (1..=LABELS as u8).contains(&r.gold_index)) {
        let gold = r.gold_index as usize - 1;
        match r.chosen_index {
            0 => unparsed[gold] += 1,
            c => m[gold][c as usize - 1] += 1,
        }
    }
    (m, unparsed)
}

/// Macro-F1 over labels that occur as gold or as prediction. Unparsed answers
/// count toward their gold label's recall denominator.
pub fn macro_f1_from_matrix(m: &ConfusionMatrix, unparsed: &[u64; LABELS]) -> f64 {
    let mut sum = 0.0;
    let mut included = 0usize;
    for l in 0..LABELS {
        let tp = m[l][l] as f64;
        let gold: u64 = m[l].iter().sum::<u64>() + unparsed[l];
        let predicted: u64 = (0..LABELS).map(|g| m[g][l]).sum();
        if gold == 0 && predicted == 0 {
            continue;
        }
        included += 1;
        let denom = (gold + predicted) as f64;
        // F1 = 2PR/(P+R) = 2TP/(gold + predicted)
        sum += if tp == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    if included == 0 {
        0.0
    } else {
        sum / included as f64
    }
}

pub fn macro_f1(records: &[EvalRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecordSet);
    }
    let (m, unparsed) = confusion_matrix(records);
    Ok(macro_f1_from_matrix(&m, &unparsed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub variant: Variant,
    pub category: Category,
    pub total: u64,
    pub correct: u64,
    /// Percent; absent when the category has no questions.
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub unparsed: [u64; LABELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub total: u64,
    pub correct: u64,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub failures: u64,
    pub mean_backend_calls: f64,
    pub mean_wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variants: Vec<Variant>,
    pub categories: Vec<Category>,
    /// Variant-major, categories in column order.
    pub cells: Vec<CellReport>,
    pub summaries: Vec<VariantSummary>,
}

impl EvalReport {
    pub fn cell(&self, variant: Variant, category: Category) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.variant == variant && c.category == category)
    }

    pub fn summary(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }
}

/// Sorts records by (variant, question id), the order every report and log uses.
pub fn sort_records(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| a.variant.cmp(&b.variant).then_with(|| a.question_id.cmp(&b.question_id)));
}

fn mean(values: impl Iterator<Item = u64>) -> f64 {
    let (sum, n) = values.fold((0u64, 0u64), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

/// Folds records into the report for the given variants, in their order.
pub fn aggregate(records: &[EvalRecord], variants: &[Variant]) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecordSet);
    }
    let mut cells = Vec::new();
    let mut summaries = Vec::new();
    for &variant in variants {
        let mine: Vec<&EvalRecord> = records.iter().filter(|r| r.variant == variant).collect();
        for category in Category::ALL {
            let subset: Vec<EvalRecord> = mine.iter().filter(|r| r.category == category).map(|r| (*r).clone()).collect();
            let (confusion, unparsed) = confusion_matrix(&subset);
            cells.push(CellReport {
                variant,
                category,
                total: subset.len() as u64,
                correct: subset.iter().filter(|r| r.correct).count() as u64,
                accuracy: accuracy(&subset).ok(),
                macro_f1: macro_f1(&subset).ok(),
                confusion,
                unparsed,
            });
        }
        let all: Vec<EvalRecord> = mine.iter().map(|r| (*r).clone()).collect();
        summaries.push(VariantSummary {
            variant,
            total: all.len() as u64,
            correct: all.iter().filter(|r| r.correct).count() as u64,
            accuracy: accuracy(&all).ok(),
            macro_f1: macro_f1(&all).ok(),
            failures: all.iter().filter(|r| r.chosen_index == 0).count() as u64,
            mean_backend_calls: mean(all.iter().map(|r| r.backend_call_count)),
            mean_wall_time_ms: mean(all.iter().map(|r| r.wall_time_ms)),
        });
    }
    Ok(EvalReport { variants: variants.to_vec(), categories: Category::ALL.to_vec(), cells, summaries })
}

/// Recomputes every cell by direct counting over the raw records and
/// compares with the report.
pub fn audit(report: &EvalReport, records: &[EvalRecord]) -> Result<(), EvalError> {
    for cell in &report.cells {
        let mismatch = |what: &str| EvalError::AuditMismatch {
            variant: cell.variant.id().to_string(),
            category: cell.category.name().to_string(),
            what: what.to_string(),
        };
        let mut total = 0u64;
        let mut correct = 0u64;
        let mut gold = [0u64; LABELS];
        let mut predicted = [0u64; LABELS];
        let mut hits = [0u64; LABELS];
        for r in records.iter().filter(|r| r.variant == cell.variant && r.category == cell.category) {
            total += 1;
            if r.chosen_index == r.gold_index {
                correct += 1;
                hits[r.gold_index as usize - 1] += 1;
            }
            gold[r.gold_index as usize - 1] += 1;
            if (1..=LABELS as u8).contains(&r.chosen_index) {
                predicted[r.chosen_index as usize - 1] += 1;
            }
        }
        if total != cell.total || correct != cell.correct {
            return Err(mismatch("counts"));
        }
        let row_sums: u64 = cell.confusion.iter().flatten().sum::<u64>() + cell.unparsed.iter().sum::<u64>();
        if row_sums != total {
            return Err(mismatch("confusion matrix does not cover every question"));
        }
        if total == 0 {
            continue;
        }
        let acc = 100.0 * correct as f64 / total as f64;
        if cell.accuracy.is_none_or(|a| (a - acc).abs() > 1e-9) {
            return Err(mismatch("accuracy"));
        }
        let mut f1s = Vec::new();
        for l in 0..LABELS {
            if gold[l] == 0 && predicted[l] == 0 {
                continue;
            }
            let p = if predicted[l] == 0 { 0.0 } else { hits[l] as f64 / predicted[l] as f64 };
            let r = if gold[l] == 0 { 0.0 } else { hits[l] as f64 / gold[l] as f64 };
            f1s.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        }
        let f1 = if f1s.is_empty() { 0.0 } else { f1s.iter().sum::<f64>() / f1s.len() as f64 };
        if cell.macro_f1.is_none_or(|m| (m - f1).abs() > 1e-9) {
            return Err(mismatch("macro-F1"));
        }
    }
    Ok(())
}

fn pad(out: &mut String, s: &str, width: usize) {
    out.push_str(s);
    for _ in s.chars().count()..width {
        out.push(' ');
    }
}

fn table(out: &mut String, report: &EvalReport, title: &str, value: impl Fn(&CellReport) -> Option<String>) {
    let first = report.variants.iter().map(|v| v.label().len()).max().unwrap_or(0).max(title.len()) + 2;
    let widths: Vec<usize> = report.categories.iter().map(|c| c.name().len() + 2).collect();
    pad(out, title, first);
    for (c, w) in report.categories.iter().zip(&widths) {
        pad(out, c.name(), *w);
    }
    trim_line(out);
    for &variant in &report.variants {
        pad(out, variant.label(), first);
        for (&category, w) in report.categories.iter().zip(&widths) {
            let v = report.cell(variant, category).and_then(&value).unwrap_or_else(|| String::from("-"));
            pad(out, &v, *w);
        }
        trim_line(out);
    }
}

fn trim_line(out: &mut String) {
    let trimmed = out.trim_end_matches(' ').len();
    out.truncate(trimmed);
    out.push('\n');
}

/// Plain-text rendering: accuracy table, macro-F1 table, per-variant cost.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    table(&mut out, report, "Accuracy (%)", |c| c.accuracy.map(|a| format!("{a:.1}")));
    out.push('\n');
    table(&mut out, report, "Macro-F1", |c| c.macro_f1.map(|f| format!("{f:.3}")));
    out.push('\n');
    let first = report.variants.iter().map(|v| v.label().len()).max().unwrap_or(0).max(7) + 2;
    pad(&mut out, "Variant", first);
    out.push_str("Questions  Accuracy  Macro-F1  Failures  Mean calls  Mean ms\n");
    for s in &report.summaries {
        pad(&mut out, s.variant.label(), first);
        let acc = s.accuracy.map_or_else(|| String::from("-"), |a| format!("{a:.1}"));
        let f1 = s.macro_f1.map_or_else(|| String::from("-"), |f| format!("{f:.3}"));
        let mut row = String::new();
        let _ = write!(
            row,
            "{:<11}{:<10}{:<10}{:<10}{:<12.2}{:.1}",
            s.total, acc, f1, s.failures, s.mean_backend_calls, s.mean_wall_time_ms
        );
        out.push_str(&row);
        trim_line(&mut out);
    }
    out
}

/// Records per variant and category, for quick count checks.
pub fn counts(records: &[EvalRecord]) -> BTreeMap<(Variant, Category), u64> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry((r.variant, r.category)).or_insert(0) += 1;
    }
    m
}
