//! Emotion-conditioned image editing toolkit: the emotion adapter, its
//! training loop, factor-tree attribution, paired-dataset curation with
//! human review, and the affective-editing metric suite.

pub mod adapter;
pub mod attribution;
pub mod config;
pub mod dataset;
pub mod emotion;
pub mod evaluation;
mod error;
pub mod pipeline;
pub mod providers;
pub mod review;
pub mod training;

pub use emotion::{EmotionLabel, Polarity};
pub use error::{Error, Result};
