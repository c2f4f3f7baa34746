//! AutoFAS: joint feature and architecture selection for pre-ranking models.
//!
//! Pipeline: synthesize click data, warm up a ranking teacher, jointly search
//! stochastic feature masks and a softmax-relaxed architecture supernet under
//! differentiable latency costs with a distillation reward, derive the
//! strongest features and operators, retrain from scratch, and evaluate.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod latency;
pub mod optim;
pub mod report;
pub mod search;
pub mod supernet;
pub mod teacher;

pub use error::{Error, Result};
