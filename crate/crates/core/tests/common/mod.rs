#![allow(dead_code)]

use std::cell::RefCell;

use vidqa_core::backend::{Backend, BackendError, BackendProfile, ChatRequest, ChatResponse, Usage};
use vidqa_core::embedding::{EmbeddingIndex, EmbeddingVector, IndexedItem, ItemKind};
use vidqa_core::summary::{GlobalSummary, TopicCluster};
use vidqa_core::{FrameRecord, Millis, TranscriptSegment, VideoAsset};

pub const DIM: usize = 64;

type Reply = Box<dyn Fn(&ChatRequest) -> String>;

/// Chat replies come from a closure over the request; embeddings hash
/// character trigrams so similar text lands close together.
pub struct Scripted {
    pub profile: BackendProfile,
    reply: Reply,
    pub log: RefCell<Vec<ChatRequest>>,
}

impl Scripted {
    pub fn new(reply: impl Fn(&ChatRequest) -> String + 'static) -> Self {
        Scripted {
            profile: BackendProfile {
                backend_id: "scripted".into(),
                context_window: 100_000,
                embedding_dim: Some(DIM),
                supports_images: true,
            },
            reply: Box::new(reply),
            log: RefCell::new(Vec::new()),
        }
    }

    pub fn with_context_window(mut self, tokens: usize) -> Self {
        self.profile.context_window = tokens;
        self
    }

    pub fn calls_with_system(&self, prefix: &str) -> Vec<ChatRequest> {
        self.log.borrow().iter().filter(|r| r.system_prompt.starts_with(prefix)).cloned().collect()
    }
}

pub fn trigram_embedding(text: &str) -> EmbeddingVector {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut v = vec![0.0f32; DIM];
    v[0] = 0.05;
    for w in chars.windows(3) {
        let mut h: u32 = 2166136261;
        for c in w {
            h = (h ^ *c as u32).wrapping_mul(16777619);
        }
        v[(h as usize) % DIM] += 1.0;
    }
    EmbeddingVector::new(v).unwrap().normalized().unwrap()
}

impl Backend for Scripted {
    fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.log.borrow_mut().push(request.clone());
        Ok(ChatResponse { text: (self.reply)(request), usage: Usage::default(), backend_id: "scripted".into() })
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        Ok(trigram_embedding(text))
    }

    fn embed_image(&self, image_ref: &str) -> Result<EmbeddingVector, BackendError> {
        Ok(trigram_embedding(image_ref))
    }
}

pub const LINES: [&str; 6] = [
    "The keeper climbs the lighthouse stairs at dusk",
    "A storm rolls in and the lamp flickers",
    "The keeper rings the bell three times",
    "A fishing boat drifts toward the rocks",
    "The lamp blazes and the boat turns away",
    "At dawn the keeper sleeps by the window",
];

/// Six ten-second cues and a frame every five seconds.
pub fn lighthouse() -> VideoAsset {
    let segments = LINES
        .iter()
        .enumerate()
        .map(|(i, t)| TranscriptSegment {
            segment_id: i,
            start: Millis(i as u64 * 10_000),
            end: Millis(i as u64 * 10_000 + 9_000),
            text: t.to_string(),
        })
        .collect();
    let frames = (0..12)
        .map(|i| FrameRecord { frame_id: i, timestamp: Millis(i as u64 * 5_000), image_ref: format!("lh/{i:03}.jpg") })
        .collect();
    VideoAsset::new("lighthouse", segments, frames, Some(Millis(60_000))).unwrap()
}

pub fn index_for(asset: &VideoAsset, backend: &dyn Backend) -> EmbeddingIndex {
    let mut index = EmbeddingIndex::new(DIM).unwrap();
    for s in &asset.segments {
        let vector = backend.embed_text(&s.text).unwrap();
        index
            .insert(IndexedItem { video_id: asset.video_id.clone(), kind: ItemKind::Transcript, ordinal: s.segment_id, vector })
            .unwrap();
    }
    for f in &asset.frames {
        let vector = backend.embed_image(&f.image_ref).unwrap();
        index.insert(IndexedItem { video_id: asset.video_id.clone(), kind: ItemKind::Frame, ordinal: f.frame_id, vector }).unwrap();
    }
    index
}

pub fn cluster(start: u64, end: u64, title: &str) -> TopicCluster {
    TopicCluster {
        start: Millis(start),
        end: Millis(end),
        title: title.into(),
        summary: format!("{title}, in brief"),
        characters: Vec::new(),
        background: String::new(),
        frame_refs: Vec::new(),
    }
}

pub fn lighthouse_summary() -> GlobalSummary {
    GlobalSummary {
        video_id: "lighthouse".into(),
        clusters: vec![cluster(0, 30_000, "The storm arrives"), cluster(30_000, 60_000, "The boat is saved")],
        generated_at: 0,
        source_batches: 1,
    }
}
