//! JSON-over-HTTP backend client.
//!
//! Two endpoints under one base URL: `POST {base}/v1/chat` and
//! `POST {base}/v1/embed`. Bodies are documented in
//! `docs/backend-integration.md`. Transient failures (connection errors,
//! timeouts, 429, 5xx) are retried with exponential backoff; at most
//! `max_in_flight` requests are outstanding per client.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use vidqa_core::backend::{Part, TokenEstimator, Usage};
use vidqa_core::{Backend, BackendError, BackendProfile, ChatRequest, ChatResponse, EmbeddingVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireConfig {
    pub backend_id: String,
    pub base_url: String,
    /// Bearer token.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub chat_model: Option<String>,
    pub embed_model: Option<String>,
    pub context_window: usize,
    pub embedding_dim: Option<usize>,
    pub supports_images: bool,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_s: u64,
}

impl Default for WireConfig {
    fn default() -> Self {
        WireConfig {
            backend_id: "wire".into(),
            base_url: "http://127.0.0.1:8080".into(),
            api_key: None,
            chat_model: None,
            embed_model: None,
            context_window: 128_000,
            embedding_dim: Some(512),
            supports_images: true,
            max_in_flight: 4,
            max_retries: 3,
            backoff_ms: 500,
            timeout_s: 120,
        }
    }
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    #[serde(flatten)]
    request: &'a ChatRequest,
}

#[derive(Deserialize)]
struct ChatReply {
    text: String,
    #[serde(default)]
    usage: Usage,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    model: &'a str,
    input: &'a Part,
}

#[derive(Deserialize)]
struct EmbedReply {
    embedding: Vec<f32>,
}

/// Counting semaphore on a mutex and condvar.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct WireBackend {
    config: WireConfig,
    profile: BackendProfile,
    client: reqwest::blocking::Client,
    gate: Gate,
}

enum Attempt {
    Retry(String),
    Fail(String),
}

impl WireBackend {
    pub fn new(config: WireConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| BackendError::BackendUnavailable(format!("http client: {e}")))?;
        let profile = BackendProfile {
            backend_id: config.backend_id.clone(),
            context_window: config.context_window,
            embedding_dim: config.embed_model.as_ref().and(config.embedding_dim),
            supports_images: config.supports_images,
        };
        let gate = Gate::new(config.max_in_flight);
        Ok(WireBackend { config, profile, client, gate })
    }

    pub fn config(&self) -> &WireConfig {
        &self.config
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1).min(16)));
            }
            let outcome = {
                let _permit = self.gate.acquire();
                self.try_post(&url, body)
            };
            match outcome {
                Ok(reply) => return Ok(reply),
                Err(Attempt::Fail(msg)) => return Err(BackendError::BackendUnavailable(msg)),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("{url}: {msg} (attempt {})", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(BackendError::BackendUnavailable(format!(
            "{url}: {last} after {} attempts",
            self.config.max_retries + 1
        )))
    }

    fn try_post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, url: &str, body: &B) -> Result<R, Attempt> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return resp.json::<R>().map_err(|e| Attempt::Fail(format!("malformed reply: {e}")));
        }
        let text = resp.text().unwrap_or_default();
        let msg = format!("HTTP {status}: {}", text.chars().take(200).collect::<String>());
        if status.as_u16() == 429 || status.is_server_error() {
            Err(Attempt::Retry(msg))
        } else {
            Err(Attempt::Fail(msg))
        }
    }

    fn embed(&self, input: &Part) -> Result<EmbeddingVector, BackendError> {
        let model = self
            .config
            .embed_model
            .as_deref()
            .ok_or_else(|| BackendError::NoEmbeddingModel(self.profile.backend_id.clone()))?;
        let reply: EmbedReply = self.post("v1/embed", &EmbedBody { model, input })?;
        Ok(EmbeddingVector::new(reply.embedding)?)
    }
}

impl Backend for WireBackend {
    fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let model = self
            .config
            .chat_model
            .as_deref()
            .ok_or_else(|| BackendError::NoChatModel(self.profile.backend_id.clone()))?;
        // overflow and capability checks never touch the network
        request.check(&self.profile, &TokenEstimator::default())?;
        let reply: ChatReply = self.post("v1/chat", &ChatBody { model, request })?;
        Ok(ChatResponse { text: reply.text, usage: reply.usage, backend_id: self.profile.backend_id.clone() })
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        self.embed(&Part::text(text))
    }

    fn embed_image(&self, image_ref: &str) -> Result<EmbeddingVector, BackendError> {
        if !self.profile.supports_images {
            return Err(BackendError::ImageUnsupported { backend_id: self.profile.backend_id.clone() });
        }
        self.embed(&Part::image(image_ref))
    }
}
