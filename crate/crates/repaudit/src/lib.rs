//! Audits demographic representation in generated text.
//!
//! The crate covers the full pipeline: prompting a completion endpoint for
//! persona/biography corpora (`harness`), associating a gender label with
//! each ungendered generation (`gender`), extracting statistically
//! significant "marked" words per group with calibrated weighted log-odds
//! (`marked`), comparing groups through embedding subset-similarity scores
//! (`bias`), and emitting representation reports against labor reference
//! data (`report`). The `pipeline` module wires the stages together for the
//! CLI.

pub mod bias;
pub mod config;
pub mod corpus;
pub mod embedding;
mod error;
pub mod gender;
pub mod harness;
pub mod marked;
pub mod pipeline;
pub mod report;
pub mod stats;

pub use error::{ClientError, Error, Result};
