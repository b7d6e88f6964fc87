//! Runner re-identification from fixed-camera race video.
//!
//! Detections are linked into tracks, tracks become running scenes with a
//! stride period and a two-step frame window, scenes are described by color
//! histograms and optional external embeddings, and scene pairs are scored
//! by fused similarity with a lap-time filter. The evaluator reports mAP and
//! CMC over the resulting similarity matrix.

pub mod color_features;
pub mod config;
pub mod data_model;
pub mod error;
pub mod evaluator;
pub mod scene_builder;
pub mod similarity;
pub mod synth;
pub mod tracker;

pub use config::PipelineConfig;
pub use data_model::*;
pub use error::{Error, Result};
