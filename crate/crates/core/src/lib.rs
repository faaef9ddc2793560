//! Transfer-learning toolkit for classroom activity recognition.
//!
//! The pipeline runs ingest -> preprocess -> frozen backbone -> GAP + softmax
//! head -> evaluation -> cross-model comparison.

pub mod dataset;
pub mod backbones;
pub mod preprocess;
pub mod model;
pub mod metrics;
pub mod reporting;
