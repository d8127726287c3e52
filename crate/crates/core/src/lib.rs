//! Allocation-only core of the agentic video question-answering engine.
//!
//! Everything here is pure computation over in-memory values: timeline
//! parsing and alignment, shared-space similarity retrieval, context-window
//! batching for the global summary, the pre-retrieval agent and rethink
//! loop, and the evaluation metrics. Model access goes through the
//! [`backend::Backend`] trait; file IO, the wire client, the mock backend and
//! the CLI live in the `vidqa` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod agent;
pub mod backend;
pub mod clock;
pub mod embedding;
pub mod eval;
pub mod orchestrator;
pub mod rethink;
pub mod summary;
pub mod text;
pub mod time;
pub mod transcript;
pub mod vtt;

pub use backend::{Backend, BackendError, BackendProfile, ChatRequest, ChatResponse, Part};
pub use embedding::{EmbeddingIndex, EmbeddingVector, ItemKind};
pub use time::Millis;
pub use transcript::{FrameRecord, TranscriptSegment, VideoAsset};
