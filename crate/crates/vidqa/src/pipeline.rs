//! Ingest, summarize and ask, wired to the store and the configured backend.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use thiserror::Error;
use vidqa_core::agent::{FixtureSearch, FunctionRegistry, OfflineSearch, SearchProvider};
use vidqa_core::backend::{normalize_checked, CallMeter};
use vidqa_core::clock::{Clock, FrozenClock};
use vidqa_core::embedding::{EmbeddingError, IndexedItem};
use vidqa_core::eval::EvalError;
use vidqa_core::orchestrator::{answer_with_variant, AgentTrace, AnswerRecord, QaEnv, QaError, Question, Variant};
use vidqa_core::summary::{build_global_summary, GlobalSummary, SummaryError};
use vidqa_core::transcript::{align_frames_to_segments, TimelineError};
use vidqa_core::vtt::{parse_webvtt, VttError};
use vidqa_core::{Backend, BackendError, EmbeddingIndex, FrameRecord, ItemKind, Millis, VideoAsset};

use crate::config::{ConfigError, EngineConfig, ProfileConfig};
use crate::frames::{self, ManifestError};
use crate::mock::{MockBackend, MockError, MockScript};
use crate::store::{check_video_id, Store, StoreError};
use crate::wire::WireBackend;

pub type SharedBackend = Box<dyn Backend + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Mock(#[from] MockError),
    #[error("frame manifest: {0}")]
    Manifest(#[from] ManifestError),
    #[error("{path}: {source}")]
    Vtt { path: String, source: VttError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("timeline: {0}")]
    Timeline(#[from] TimelineError),
    #[error("backend profile `{profile}`: {source}")]
    Backend { profile: String, source: BackendError },
    #[error("embedding: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("summary: {0}")]
    Summary(#[from] SummaryError),
    #[error(transparent)]
    Qa(#[from] QaError),
    #[error("video `{0}` is already ingested; pass --force to replace it")]
    AlreadyIngested(String),
    #[error("no frame source: pass --frames <manifest.jsonl>, --extract <video file>, or --no-frames for a video without frames")]
    NoFrameSource,
    #[error("no transcript: pass --vtt <file.vtt>, or --no-transcript for a silent video")]
    NoTranscript,
    #[error("--extract needs a frame extractor command; set `extractor` in the config file or VIDQA_EXTRACTOR")]
    NoExtractor,
    #[error("frame manifest {0} not found; pass --frames <manifest.jsonl> or --extract <video file>")]
    ManifestNotFound(String),
    #[error("video `{0}` has neither transcript segments nor frames")]
    EmptyAsset(String),
    #[error("backend profile `{0}` cannot read images, so it cannot summarize a video with frames")]
    SummaryNeedsImages(String),
    #[error("mock profile `{0}` has no script; set its `script` in the config file or VIDQA_MOCK_SCRIPT")]
    MockWithoutScript(String),
    #[error("dataset: {0}")]
    Dataset(#[from] EvalError),
    #[error("question `{question_id}` refers to video `{video_id}`, which is not ingested")]
    MissingVideo { question_id: String, video_id: String },
    #[error("every one of the {0} evaluation cells failed")]
    AllCellsFailed(usize),
}

impl PipelineError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Qa(QaError::LabelParseFailure { .. }) => 3,
            PipelineError::Qa(QaError::MissingComponentForVariant { .. }) => 4,
            _ => 1,
        }
    }
}

/// Wall clock in milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
    }
}

pub enum FrameSource {
    None,
    Manifest(PathBuf),
    Extract(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub video_id: String,
    pub segments: usize,
    pub frames: usize,
    /// Frames that fall inside some transcript segment.
    pub aligned_frames: usize,
    pub duration: Millis,
    pub embed_calls: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummarizeReport {
    pub summary: GlobalSummary,
    pub cached: bool,
    pub backend_calls: u64,
    pub warnings: Vec<String>,
}

pub struct Engine {
    pub config: EngineConfig,
    pub store: Store,
    pub backend: SharedBackend,
    pub clock: Box<dyn Clock + Send + Sync>,
    pub search: Box<dyn SearchProvider>,
    pub registry: FunctionRegistry,
}

/// Builds the backend named by `config.backend_profile`.
pub fn build_backend(config: &EngineConfig) -> Result<SharedBackend, PipelineError> {
    let name = config.backend_profile.clone();
    match config.profile()? {
        ProfileConfig::Mock { script } => {
            let path = script.as_ref().ok_or(PipelineError::MockWithoutScript(name))?;
            let script = MockScript::load(path)?;
            Ok(Box::new(MockBackend::new(script, config.embedding_dim, config.seed)?))
        }
        ProfileConfig::Wire(w) => {
            let backend = WireBackend::new(w.clone()).map_err(|source| PipelineError::Backend { profile: name, source })?;
            Ok(Box::new(backend))
        }
    }
}

pub fn load_search(path: Option<&Path>) -> Result<Box<dyn SearchProvider>, PipelineError> {
    let Some(path) = path else {
        return Ok(Box::new(OfflineSearch));
    };
    let io = |source| PipelineError::Io { path: path.display().to_string(), source };
    let text = std::fs::read_to_string(path).map_err(io)?;
    let map: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)
        .map_err(|e| io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
    let mut fixture = FixtureSearch::new();
    for (term, snippets) in &map {
        let refs: Vec<&str> = snippets.iter().map(String::as_str).collect();
        fixture = fixture.with(term, &refs);
    }
    Ok(Box::new(fixture))
}

/// Embeds every segment and frame of the asset.
pub fn embed_asset(asset: &VideoAsset, backend: &(dyn Backend + Send + Sync)) -> Result<EmbeddingIndex, BackendError> {
    let profile = backend.profile();
    let dim = profile.embedding_dim.ok_or_else(|| BackendError::NoEmbeddingModel(profile.backend_id.clone()))?;
    let mut index = EmbeddingIndex::new(dim)?;
    let texts: Vec<_> = asset
        .segments
        .par_iter()
        .map(|s| backend.embed_text(&s.text).and_then(|v| normalize_checked(profile, v)))
        .collect::<Result<_, _>>()?;
    let images: Vec<_> = asset
        .frames
        .par_iter()
        .map(|f| backend.embed_image(&f.image_ref).and_then(|v| normalize_checked(profile, v)))
        .collect::<Result<_, _>>()?;
    for (ordinal, vector) in texts.into_iter().enumerate() {
        index.insert(IndexedItem { video_id: asset.video_id.clone(), kind: ItemKind::Transcript, ordinal, vector })?;
    }
    for (ordinal, vector) in images.into_iter().enumerate() {
        index.insert(IndexedItem { video_id: asset.video_id.clone(), kind: ItemKind::Frame, ordinal, vector })?;
    }
    Ok(index)
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, PipelineError> {
        let backend = build_backend(&config)?;
        let deterministic = matches!(config.profile()?, ProfileConfig::Mock { .. });
        let clock: Box<dyn Clock + Send + Sync> = if deterministic { Box::new(FrozenClock(0)) } else { Box::new(SystemClock) };
        Self::with_parts(config, backend, clock)
    }

    pub fn with_parts(
        config: EngineConfig,
        backend: SharedBackend,
        clock: Box<dyn Clock + Send + Sync>,
    ) -> Result<Self, PipelineError> {
        let search = load_search(config.search_fixture.as_deref())?;
        Ok(Engine { store: Store::new(&config.store_dir), config, backend, clock, search, registry: FunctionRegistry::builtin() })
    }

    fn backend_err(&self, source: BackendError) -> PipelineError {
        PipelineError::Backend { profile: self.config.backend_profile.clone(), source }
    }

    pub fn ingest(
        &self,
        video_id: &str,
        vtt: Option<&Path>,
        frame_source: FrameSource,
        force: bool,
    ) -> Result<IngestReport, PipelineError> {
        check_video_id(video_id)?;
        let _lock = self.store.lock(video_id)?;
        if self.store.is_ingested(video_id) && !force {
            return Err(PipelineError::AlreadyIngested(video_id.to_string()));
        }
        let segments = match vtt {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
                parse_webvtt(&text).map_err(|source| PipelineError::Vtt { path: path.display().to_string(), source })?
            }
            None => Vec::new(),
        };
        let frames: Vec<FrameRecord> = match frame_source {
            FrameSource::None => Vec::new(),
            FrameSource::Manifest(path) => {
                if !path.is_file() {
                    return Err(PipelineError::ManifestNotFound(path.display().to_string()));
                }
                frames::load_manifest(&path)?
            }
            FrameSource::Extract(video) => {
                let template = self.config.extractor.as_deref().ok_or(PipelineError::NoExtractor)?;
                let out_dir = self.store.video_dir(video_id).join("frames");
                frames::extract_frames(template, &video, self.config.interval(), &out_dir)?
            }
        };
        let asset = VideoAsset::new(video_id, segments, frames, None)?;
        if asset.is_empty() {
            return Err(PipelineError::EmptyAsset(video_id.to_string()));
        }
        let aligned_frames = align_frames_to_segments(&asset).iter().filter(|a| a.is_some()).count();
        let index = embed_asset(&asset, self.backend.as_ref()).map_err(|e| self.backend_err(e))?;
        self.store.save_ingest(&asset, &index)?;
        Ok(IngestReport {
            video_id: video_id.to_string(),
            segments: asset.segments.len(),
            frames: asset.frames.len(),
            aligned_frames,
            duration: asset.duration,
            embed_calls: (asset.segments.len() + asset.frames.len()) as u64,
        })
    }

    /// Returns the cached summary, or builds and caches it.
    pub fn summarize(&self, video_id: &str) -> Result<SummarizeReport, PipelineError> {
        let _lock = self.store.lock(video_id)?;
        if let Some(summary) = self.store.load_summary(video_id)? {
            return Ok(SummarizeReport { summary, cached: true, backend_calls: 0, warnings: Vec::new() });
        }
        let asset = self.store.load_asset(video_id)?;
        let profile = self.backend.profile();
        if !asset.frames.is_empty() && !profile.supports_images {
            return Err(PipelineError::SummaryNeedsImages(self.config.backend_profile.clone()));
        }
        let meter = CallMeter::new(self.backend.as_ref());
        let config = self.config.summary_config(profile.context_window);
        let outcome = build_global_summary(&asset, &meter, &config, self.clock.as_ref()).map_err(|e| match e {
            SummaryError::Backend(source) => self.backend_err(source),
            SummaryError::Batch { batch_id, source } => match *source {
                SummaryError::Backend(b) => self.backend_err(b),
                other => PipelineError::Summary(SummaryError::Batch { batch_id, source: Box::new(other) }),
            },
            other => PipelineError::Summary(other),
        })?;
        self.store.save_summary(&outcome.summary)?;
        Ok(SummarizeReport {
            summary: outcome.summary,
            cached: false,
            backend_calls: meter.chat_calls(),
            warnings: outcome.warnings,
        })
    }

    pub fn ask(&self, question: &Question, variant: Variant) -> Result<(AnswerRecord, AgentTrace), PipelineError> {
        let asset = self.store.load_asset(&question.video_id)?;
        let index = self.store.load_index(&question.video_id)?;
        let summary = if variant.uses_summary() { self.store.load_summary(&question.video_id)? } else { None };
        let qa = self.config.qa_config();
        let env = QaEnv {
            asset: &asset,
            index: &index,
            summary: summary.as_ref(),
            backend: self.backend.as_ref(),
            registry: &self.registry,
            search: self.search.as_ref(),
            clock: self.clock.as_ref(),
            config: &qa,
        };
        Ok(answer_with_variant(question, variant, &env)?)
    }
}
