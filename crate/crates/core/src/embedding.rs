//! Shared-space embeddings and exhaustive cosine retrieval.
//!
//! Frames and transcript segments of a video live in one `z`-dimensional
//! space together with query embeddings. Retrieval is an exact linear scan:
//! selecting the `n` individually best-scoring items is the same as
//! maximizing the summed similarity over all size-`n` subsets.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector has zero norm")]
    ZeroNormVector,
    #[error("vector has a non-finite component")]
    NonFinite,
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("{kind:?} {ordinal} of video `{video_id}` already indexed with a different vector")]
    ConflictingDuplicate { video_id: String, kind: ItemKind, ordinal: usize },
    #[error("no {kind:?} items indexed for video `{video_id}`")]
    EmptyIndexForKind { video_id: String, kind: ItemKind },
    #[error("frame {ordinal} is not indexed for video `{video_id}`")]
    UnknownFrame { video_id: String, ordinal: usize },
    #[error("top-n requires n >= 1")]
    ZeroN,
}

/// A finite real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDimension);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| (*v as f64) * (*v as f64)).sum())
    }

    /// Scales to unit L2 norm.
    pub fn normalized(&self) -> Result<Self, EmbeddingError> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroNormVector);
        }
        Ok(EmbeddingVector(self.0.iter().map(|v| (*v as f64 / norm) as f32).collect()))
    }

    pub fn scaled(&self, factor: f32) -> Self {
        EmbeddingVector(self.0.iter().map(|v| v * factor).collect())
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNormVector);
    }
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Frame,
    Transcript,
}

/// One indexed frame or transcript embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedItem {
    pub video_id: String,
    pub kind: ItemKind,
    pub ordinal: usize,
    pub vector: EmbeddingVector,
}

/// A scored retrieval hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub ordinal: usize,
    pub score: f64,
}

/// Top frames and transcripts for one query. Either side may be empty when
/// the video has no items of that kind.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub top_frame: Option<usize>,
    pub top_transcript: Option<usize>,
    pub frames: Vec<Hit>,
    pub transcripts: Vec<Hit>,
}

impl RetrievalResult {
    pub fn frame_ids(&self) -> Vec<usize> {
        self.frames.iter().map(|h| h.ordinal).collect()
    }

    pub fn transcript_ids(&self) -> Vec<usize> {
        self.transcripts.iter().map(|h| h.ordinal).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Stored {
    vector: EmbeddingVector,
    norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct VideoEntries {
    frames: BTreeMap<usize, Stored>,
    transcripts: BTreeMap<usize, Stored>,
}

impl VideoEntries {
    fn kind(&self, kind: ItemKind) -> &BTreeMap<usize, Stored> {
        match kind {
            ItemKind::Frame => &self.frames,
            ItemKind::Transcript => &self.transcripts,
        }
    }

    fn kind_mut(&mut self, kind: ItemKind) -> &mut BTreeMap<usize, Stored> {
        match kind {
            ItemKind::Frame => &mut self.frames,
            ItemKind::Transcript => &mut self.transcripts,
        }
    }
}

/// In-memory embedding store keyed by `(video_id, kind, ordinal)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    videos: BTreeMap<String, VideoEntries>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        Ok(EmbeddingIndex { dim, videos: BTreeMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.videos.values().map(|v| v.frames.len() + v.transcripts.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, video_id: &str, kind: ItemKind) -> usize {
        self.videos.get(video_id).map_or(0, |v| v.kind(kind).len())
    }

    /// Adds an item. Re-inserting an identical vector is a no-op.
    pub fn insert(&mut self, item: IndexedItem) -> Result<(), EmbeddingError> {
        if item.vector.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dim, got: item.vector.dim() });
        }
        let norm = item.vector.norm();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroNormVector);
        }
        let slot = self.videos.entry(item.video_id.clone()).or_default().kind_mut(item.kind);
        match slot.get(&item.ordinal) {
            Some(existing) if existing.vector == item.vector => Ok(()),
            Some(_) => Err(EmbeddingError::ConflictingDuplicate {
                video_id: item.video_id,
                kind: item.kind,
                ordinal: item.ordinal,
            }),
            None => {
                slot.insert(item.ordinal, Stored { vector: item.vector, norm });
                Ok(())
            }
        }
    }

    pub fn get(&self, video_id: &str, kind: ItemKind, ordinal: usize) -> Option<&EmbeddingVector> {
        self.videos.get(video_id)?.kind(kind).get(&ordinal).map(|s| &s.vector)
    }

    /// All items in `(video_id, kind, ordinal)` order.
    pub fn items(&self) -> impl Iterator<Item = IndexedItem> + '_ {
        self.videos.iter().flat_map(|(video_id, entries)| {
            [ItemKind::Frame, ItemKind::Transcript].into_iter().flat_map(move |kind| {
                entries.kind(kind).iter().map(move |(ordinal, stored)| IndexedItem {
                    video_id: video_id.clone(),
                    kind,
                    ordinal: *ordinal,
                    vector: stored.vector.clone(),
                })
            })
        })
    }

    pub fn video_ids(&self) -> impl Iterator<Item = &str> {
        self.videos.keys().map(String::as_str)
    }

    /// Drops every item of a video.
    pub fn remove_video(&mut self, video_id: &str) {
        self.videos.remove(video_id);
    }

    /// The `n` most similar items of one kind, best first; ties go to the lower ordinal.
    pub fn top_n(
        &self,
        query: &EmbeddingVector,
        kind: ItemKind,
        n: usize,
        video_id: &str,
    ) -> Result<Vec<Hit>, EmbeddingError> {
        if n == 0 {
            return Err(EmbeddingError::ZeroN);
        }
        if query.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dim, got: query.dim() });
        }
        let qnorm = query.norm();
        if qnorm == 0.0 {
            return Err(EmbeddingError::ZeroNormVector);
        }
        let items = self
            .videos
            .get(video_id)
            .map(|v| v.kind(kind))
            .filter(|m| !m.is_empty())
            .ok_or_else(|| EmbeddingError::EmptyIndexForKind { video_id: video_id.into(), kind })?;
        let mut hits: Vec<Hit> = items
            .iter()
            .map(|(ordinal, s)| Hit {
                ordinal: *ordinal,
                score: (dot(query.values(), s.vector.values()) / (qnorm * s.norm)).clamp(-1.0, 1.0),
            })
            .collect();
        hits.sort_by(rank_order);
        hits.truncate(n);
        Ok(hits)
    }

    /// Top-`n` frames and transcripts for one query. A kind with no items
    /// yields an empty side; both kinds empty is an error.
    pub fn retrieve(
        &self,
        query: &EmbeddingVector,
        n: usize,
        video_id: &str,
    ) -> Result<RetrievalResult, EmbeddingError> {
        let frames = self.top_n_or_empty(query, ItemKind::Frame, n, video_id)?;
        let transcripts = self.top_n_or_empty(query, ItemKind::Transcript, n, video_id)?;
        if frames.is_empty() && transcripts.is_empty() {
            return Err(EmbeddingError::EmptyIndexForKind { video_id: video_id.into(), kind: ItemKind::Frame });
        }
        Ok(RetrievalResult {
            top_frame: frames.first().map(|h| h.ordinal),
            top_transcript: transcripts.first().map(|h| h.ordinal),
            frames,
            transcripts,
        })
    }

    fn top_n_or_empty(
        &self,
        query: &EmbeddingVector,
        kind: ItemKind,
        n: usize,
        video_id: &str,
    ) -> Result<Vec<Hit>, EmbeddingError> {
        match self.top_n(query, kind, n, video_id) {
            Err(EmbeddingError::EmptyIndexForKind { .. }) => Ok(Vec::new()),
            other => other,
        }
    }

    /// `{i*-1, i*, i*+1}` clamped to the indexed frames, ascending.
    pub fn local_frame_window(&self, i_star: usize, video_id: &str) -> Result<Vec<usize>, EmbeddingError> {
        let frames = self.videos.get(video_id).map(|v| &v.frames);
        let unknown = || EmbeddingError::UnknownFrame { video_id: video_id.into(), ordinal: i_star };
        let frames = frames.ok_or_else(unknown)?;
        if !frames.contains_key(&i_star) {
            return Err(unknown());
        }
        Ok(i_star
            .checked_sub(1)
            .into_iter()
            .chain([i_star, i_star + 1])
            .filter(|i| frames.contains_key(i))
            .collect())
    }
}

/// Descending score, then ascending ordinal.
pub fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then(a.ordinal.cmp(&b.ordinal))
}
