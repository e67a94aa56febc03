//! Task-level exemplar subset selection for in-context learning.
//!
//! The engine clusters a training pool by question embeddings, samples a
//! small universe of candidate exemplar subsets, and runs a sampling-based
//! bandit that fits a linear model of subset loss over similarity features
//! while spending as few generation calls as possible. Selected subsets are
//! then evaluated against static and dynamic baselines, with persistent
//! response caching and exact call accounting throughout.

pub mod artifact;
pub mod bandit;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod evalrun;
pub mod llm;
pub mod pool;
pub mod score;
pub mod seeded;

pub use error::{Error, Result};
