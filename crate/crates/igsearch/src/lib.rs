//! Step-level information-gain reward shaping for search-augmented
//! policies, trained with group-normalized advantages on a synthetic
//! multi-hop QA environment.

pub mod config;
pub mod error;
pub mod grpo;
pub mod ig;
pub mod metrics;
pub mod policy;
pub mod report;
pub mod rewards;
pub mod scorer;
pub mod trainer;
pub mod trajectory;
pub mod world;

pub use error::{Error, Result};
