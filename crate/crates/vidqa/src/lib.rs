//! Store, file formats, model backends and command-line interface for the
//! agentic video question-answering engine. The algorithms live in
//! `vidqa-core`; this crate adds everything that touches the outside world.

pub mod cli;
pub mod config;
pub mod eval_run;
pub mod frames;
pub mod index_file;
pub mod mock;
pub mod pipeline;
pub mod store;
pub mod wire;

pub use vidqa_core as core;
