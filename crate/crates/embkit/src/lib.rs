//! File formats, stage runners, and pipeline orchestration around
//! `embkit-core`: JSONL corpora and triplets, versioned JSON model and
//! index files, TREC-style qrels and run files, schema validation, and a
//! config-driven end-to-end driver.
//!
//! The `embkit` binary in this crate exposes each stage as a subcommand;
//! everything the binary does goes through this library, so stages are
//! equally scriptable in-process.

pub mod error;
pub mod io;
pub mod pipeline;
pub mod stages;
pub mod validate;

pub use embkit_core as core;
pub use error::CliError;
