//! Conditional user-to-item retrieval.
//!
//! A two-tower model whose user tower can additionally consume a condition
//! (a topic sampled from the engaged item's metadata), trained with in-batch
//! sampled softmax, served through a layered proximity graph with optional
//! streaming topic filters, and compared against an unconditioned two-tower
//! model and a topic popularity index.

pub mod condition;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
mod fileio;
pub mod retrieval;
pub mod rng;
pub mod tower;
pub mod trainer;

pub use condition::Condition;
pub use dataset::{Dataset, GenConfig};
pub use error::{Error, Result};
pub use fileio::write_atomic;
pub use retrieval::{ItemIndex, RetrievalResult};
pub use tower::{Checkpoint, ModelParams, TowerConfig};
pub use trainer::{TrainConfig, TrainReport};
