//! gatebench: a deterministic evaluation harness for measuring residual
//! multi-hop composition failure in language models.
//!
//! The harness separates "the model doesn't know a fact" from "the model
//! can't compose facts it knows" with a double gate: a case only counts
//! toward composition failure when every constituent atom is stable under
//! paraphrase (atomic gate) and every sub-question is answered correctly in
//! isolation (sub-question gate). Everything downstream — per-depth failure
//! rates, critical-depth estimates, gate-population contrasts — is computed
//! over that gated population with seeded, reproducible statistics.

pub mod adjudicator;
pub mod backend;
pub mod canonical;
pub mod cli;
pub mod error;
pub mod extract;
pub mod gate;
pub mod generator;
pub mod matcher;
pub mod pipeline;
pub mod pool;
pub mod prompt;
pub mod report;
pub mod scripted;
pub mod stats;

pub use error::{Error, Result};
