//! Scripted backend for tests and offline runs.
//!
//! Chat replies come from an ordered rule list matched against the rendered
//! prompt. Embeddings are signed trigram hashes, so texts that share words
//! land close together and every run with the same seed gives the same
//! vectors.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;
use vidqa_core::backend::{Usage, TokenEstimator};
use vidqa_core::{Backend, BackendError, BackendProfile, ChatRequest, ChatResponse, EmbeddingVector};

#[derive(Debug, Error)]
pub enum MockError {
    #[error("reading mock script {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("mock script: {0}")]
    Json(#[from] serde_json::Error),
    #[error("mock rule {index}: bad pattern: {source}")]
    Pattern { index: usize, source: regex::Error },
}

#[derive(Debug, Clone, Deserialize)]
pub struct RuleSpec {
    /// Regex searched in the rendered prompt.
    pub when: String,
    /// Reply template; `$1`, `${name}` expand to captures.
    pub reply: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default = "default_id")]
    pub backend_id: String,
    #[serde(default = "default_window")]
    pub context_window: usize,
    /// Overrides the engine's embedding dimension.
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    #[serde(default = "yes")]
    pub supports_images: bool,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    /// Reply when no rule matches.
    pub default: String,
    /// Image refs embedded as if they were this text.
    #[serde(default)]
    pub captions: BTreeMap<String, String>,
}

fn default_id() -> String {
    "mock".into()
}

fn default_window() -> usize {
    32_768
}

fn yes() -> bool {
    true
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, MockError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, MockError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| MockError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// A script with no rules.
    pub fn replying(default: &str) -> Self {
        MockScript {
            backend_id: default_id(),
            context_window: default_window(),
            embedding_dim: None,
            supports_images: true,
            rules: Vec::new(),
            default: default.into(),
            captions: BTreeMap::new(),
        }
    }

    pub fn rule(mut self, when: &str, reply: &str) -> Self {
        self.rules.push(RuleSpec { when: when.into(), reply: reply.into() });
        self
    }
}

pub struct MockBackend {
    profile: BackendProfile,
    rules: Vec<(Regex, String)>,
    default: String,
    captions: BTreeMap<String, String>,
    seed: u64,
    chat_calls: AtomicU64,
    embed_calls: AtomicU64,
}

impl MockBackend {
    pub fn new(script: MockScript, embedding_dim: usize, seed: u64) -> Result<Self, MockError> {
        let rules = script
            .rules
            .iter()
            .enumerate()
            .map(|(index, r)| {
                Regex::new(&r.when).map(|re| (re, r.reply.clone())).map_err(|source| MockError::Pattern { index, source })
            })
            .collect::<Result<_, _>>()?;
        Ok(MockBackend {
            profile: BackendProfile {
                backend_id: script.backend_id,
                context_window: script.context_window,
                embedding_dim: Some(script.embedding_dim.unwrap_or(embedding_dim)),
                supports_images: script.supports_images,
            },
            rules,
            default: script.default,
            captions: script.captions,
            seed,
            chat_calls: AtomicU64::new(0),
            embed_calls: AtomicU64::new(0),
        })
    }

    pub fn chat_calls(&self) -> u64 {
        self.chat_calls.load(Ordering::Relaxed)
    }

    pub fn embed_calls(&self) -> u64 {
        self.embed_calls.load(Ordering::Relaxed)
    }

    /// Reply for a rendered prompt, without counting a call.
    pub fn reply_for(&self, rendered: &str) -> String {
        for (re, template) in &self.rules {
            if let Some(caps) = re.captures(rendered) {
                let mut out = String::new();
                caps.expand(template, &mut out);
                return out;
            }
        }
        self.default.clone()
    }

    fn dim(&self) -> usize {
        self.profile.embedding_dim.unwrap_or(1)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Signed character-trigram hash embedding, unit length.
pub fn trigram_embedding(text: &str, dim: usize, seed: u64) -> Result<EmbeddingVector, BackendError> {
    let chars: Vec<char> = format!(" {} ", text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" "))
        .chars()
        .collect();
    if chars.len() < 3 || text.trim().is_empty() {
        return Err(BackendError::EmptyInput);
    }
    let mut v = vec![0f32; dim];
    let mut buf = [0u8; 12];
    for w in chars.windows(3) {
        let mut n = 0;
        for c in w {
            n += c.encode_utf8(&mut buf[n..]).len();
        }
        let h = fnv1a(seed, &buf[..n]);
        let slot = (h % dim as u64) as usize;
        v[slot] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
    if v.iter().all(|x| *x == 0.0) {
        // every trigram cancelled out; fall back to one deterministic slot
        v[(fnv1a(seed, text.as_bytes()) % dim as u64) as usize] = 1.0;
    }
    Ok(EmbeddingVector::new(v)?.normalized()?)
}

impl Backend for MockBackend {
    fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.check(&self.profile, &self.estimator())?;
        self.chat_calls.fetch_add(1, Ordering::Relaxed);
        let text = self.reply_for(&request.render());
        let estimator = TokenEstimator::default();
        Ok(ChatResponse {
            usage: Usage {
                input_tokens: request.estimated_tokens(&estimator) as u64,
                output_tokens: estimator.text(&text) as u64,
            },
            text,
            backend_id: self.profile.backend_id.clone(),
        })
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        self.embed_calls.fetch_add(1, Ordering::Relaxed);
        trigram_embedding(text, self.dim(), self.seed)
    }

    fn embed_image(&self, image_ref: &str) -> Result<EmbeddingVector, BackendError> {
        self.embed_calls.fetch_add(1, Ordering::Relaxed);
        match self.captions.get(image_ref) {
            Some(caption) => trigram_embedding(caption, self.dim(), self.seed),
            None => trigram_embedding(&format!("image {image_ref}"), self.dim(), self.seed),
        }
    }
}
