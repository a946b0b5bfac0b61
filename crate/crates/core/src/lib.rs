//! Dual-branch patch transformer for multi-script text recognition.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradient_audit;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod train;
pub mod ngram;
pub mod vision;
pub mod visual_words;
pub mod vocab;

pub use error::{Result, TangerError};
