//! Model access: chat-capable vision-language models and embedding encoders.
//!
//! Every other module reaches models only through [`Backend`]. The `vidqa`
//! crate provides the HTTP wire client and the scripted mock.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::Cell;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingVector};

/// Default flat token cost charged per image part.
pub const DEFAULT_IMAGE_TOKEN_COST: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Part {
    Text { text: String },
    Image { image_ref: String },
}

impl Part {
    pub fn text(text: impl Into<String>) -> Self {
        Part::Text { text: text.into() }
    }

    pub fn image(image_ref: impl Into<String>) -> Self {
        Part::Image { image_ref: image_ref.into() }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Part::Image { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_parts: Vec<Part>,
    pub max_output_tokens: u32,
    pub temperature: f32,
}

impl ChatRequest {
    /// A request with the engine defaults: temperature 0, 1024 output tokens.
    pub fn new(system_prompt: impl Into<String>, user_parts: Vec<Part>) -> Self {
        ChatRequest { system_prompt: system_prompt.into(), user_parts, max_output_tokens: 1024, temperature: 0.0 }
    }

    pub fn with_max_output_tokens(mut self, tokens: u32) -> Self {
        self.max_output_tokens = tokens;
        self
    }

    /// Checks the request against a backend before any call is made.
    pub fn check(&self, profile: &BackendProfile, estimator: &TokenEstimator) -> Result<(), BackendError> {
        if self.user_parts.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        if !profile.supports_images && self.user_parts.iter().any(Part::is_image) {
            return Err(BackendError::ImageUnsupported { backend_id: profile.backend_id.clone() });
        }
        let estimate = self.estimated_tokens(estimator);
        if estimate > profile.context_window {
            return Err(BackendError::ContextOverflow { estimate, context_window: profile.context_window });
        }
        Ok(())
    }

    /// Estimate over the system prompt and all user parts.
    pub fn estimated_tokens(&self, estimator: &TokenEstimator) -> usize {
        estimator.text(&self.system_prompt) + estimator.parts(&self.user_parts)
    }

    /// Flat rendering used for mock matching and prompt digests.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("[system]\n");
        out.push_str(&self.system_prompt);
        out.push_str("\n[user]\n");
        for part in &self.user_parts {
            match part {
                Part::Text { text } => out.push_str(text),
                Part::Image { image_ref } => {
                    let _ = write!(out, "[image: {image_ref}]");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of [`ChatRequest::render`].
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.render().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in hash.iter() {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default)]
    pub usage: Usage,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub backend_id: String,
    pub context_window: usize,
    pub embedding_dim: Option<usize>,
    pub supports_images: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("request needs ~{estimate} tokens, context window is {context_window}")]
    ContextOverflow { estimate: usize, context_window: usize },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend `{backend_id}` does not accept images")]
    ImageUnsupported { backend_id: String },
    #[error("empty input")]
    EmptyInput,
    #[error("backend `{0}` has no embedding model")]
    NoEmbeddingModel(String),
    #[error("backend `{0}` has no chat model")]
    NoChatModel(String),
    #[error("embedding: {0}")]
    Embedding(#[from] EmbeddingError),
}

/// A chat model plus embedding encoders sharing one space.
pub trait Backend {
    fn profile(&self) -> &BackendProfile;

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError>;

    fn embed_image(&self, image_ref: &str) -> Result<EmbeddingVector, BackendError>;

    /// Token estimator used for context checks and batching.
    fn estimator(&self) -> TokenEstimator {
        TokenEstimator::default()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn profile(&self) -> &BackendProfile {
        (**self).profile()
    }
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat(request)
    }
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        (**self).embed_text(text)
    }
    fn embed_image(&self, image_ref: &str) -> Result<EmbeddingVector, BackendError> {
        (**self).embed_image(image_ref)
    }
    fn estimator(&self) -> TokenEstimator {
        (**self).estimator()
    }
}

/// Deterministic token overestimate: `ceil(chars / 4)` per text part plus a
/// flat cost per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEstimator {
    pub image_cost: usize,
}

impl Default for TokenEstimator {
    fn default() -> Self {
        TokenEstimator { image_cost: DEFAULT_IMAGE_TOKEN_COST }
    }
}

impl TokenEstimator {
    pub fn text(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }

    pub fn part(&self, part: &Part) -> usize {
        match part {
            Part::Text { text } => self.text(text),
            Part::Image { .. } => self.image_cost,
        }
    }

    pub fn parts(&self, parts: &[Part]) -> usize {
        parts.iter().map(|p| self.part(p)).sum()
    }
}

/// Counts calls and unit-normalizes embeddings on the way through.
///
/// One meter wraps the shared backend for the duration of one question so
/// traces can report how many model calls the question cost.
pub struct CallMeter<B> {
    inner: B,
    chat_calls: Cell<u64>,
    embed_calls: Cell<u64>,
}

impl<B: Backend> CallMeter<B> {
    pub fn new(inner: B) -> Self {
        CallMeter { inner, chat_calls: Cell::new(0), embed_calls: Cell::new(0) }
    }

    pub fn chat_calls(&self) -> u64 {
        self.chat_calls.get()
    }

    pub fn embed_calls(&self) -> u64 {
        self.embed_calls.get()
    }

    pub fn total_calls(&self) -> u64 {
        self.chat_calls() + self.embed_calls()
    }
}

impl<B: Backend> Backend for CallMeter<B> {
    fn profile(&self) -> &BackendProfile {
        self.inner.profile()
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.check(self.inner.profile(), &self.inner.estimator())?;
        self.chat_calls.set(self.chat_calls.get() + 1);
        self.inner.chat(request)
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        self.embed_calls.set(self.embed_calls.get() + 1);
        normalize_checked(self.inner.profile(), self.inner.embed_text(text)?)
    }

    fn embed_image(&self, image_ref: &str) -> Result<EmbeddingVector, BackendError> {
        if image_ref.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        self.embed_calls.set(self.embed_calls.get() + 1);
        normalize_checked(self.inner.profile(), self.inner.embed_image(image_ref)?)
    }

    fn estimator(&self) -> TokenEstimator {
        self.inner.estimator()
    }
}

/// Unit-normalizes a provider vector and checks it against the declared dimension.
pub fn normalize_checked(profile: &BackendProfile, vector: EmbeddingVector) -> Result<EmbeddingVector, BackendError> {
    let dim = profile.embedding_dim.ok_or_else(|| BackendError::NoEmbeddingModel(profile.backend_id.clone()))?;
    if vector.dim() != dim {
        return Err(EmbeddingError::DimensionMismatch { expected: dim, got: vector.dim() }.into());
    }
    Ok(vector.normalized()?)
}

/// Chat call returning only the trimmed response text.
pub fn chat_text<B: Backend + ?Sized>(backend: &B, request: &ChatRequest) -> Result<String, BackendError> {
    Ok(backend.chat(request)?.text.trim().to_string())
}
