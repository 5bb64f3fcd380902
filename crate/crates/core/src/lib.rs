//! Variance-aware benchmark scoring from multi-generation correctness records.
//!
//! Each prompt of a benchmark is answered `k` times; every answer is judged
//! correct or not. From that matrix this crate estimates the benchmark score
//! with a within/between-prompt variance decomposition, per-prompt difficulty
//! and semantic consistency, data maps that surface suspicious labels,
//! subsampling studies over `k`, model ranking probabilities, and a Monte
//! Carlo simulator of the underlying hierarchical Bernoulli model.

pub mod cli;
pub mod consistency;
pub mod datamap;
pub mod error;
pub mod estimator;
pub mod irt;
pub mod normal;
pub mod ranking;
pub mod records;
pub mod report;
pub mod resample;
pub mod rng;
pub mod svg;
pub mod synthetic;

pub use error::{Error, Result};
pub use estimator::{estimate, BenchmarkEstimate, PromptDifficulty};
pub use records::{DecodingMode, GenerationMatrix, GenerationRecord, PromptRow, Selection};
