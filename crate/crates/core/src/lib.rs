//! Incremental sequence labelling with an adaptive revision policy.
//!
//! An LSTM labels each incoming token; an attention controller over a small
//! cache of past input/output representations decides after every token
//! whether to keep the new label (`WRITE`) or rerun a bidirectional encoder
//! over the whole prefix (`REVISE`).

pub mod error;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod evalkit;
pub mod layers;
pub mod memory;
pub mod signal;
pub mod tensorkit;
pub mod trainer;

pub use error::{Error, Result};
