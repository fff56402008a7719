//! Multimodal failure diagnosis for microservice systems.
//!
//! The pipeline turns raw telemetry (metrics, traces, logs) into unified
//! alert events, embeds them per service instance, encodes each modality over
//! the instance call graph, and trains two heads jointly: root cause
//! localization (a ranking over instances) and failure type identification
//! (a classification over fault categories). Two contrastive objectives keep
//! the three modality views task-aligned, and exact Shapley values over the
//! modality feature blocks explain each diagnosis.

pub mod alerts;
pub mod augment;
pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod diagnose;
pub mod embed;
pub mod error;
pub mod evalkit;
pub mod guide;
pub mod iforest;
pub mod logparse;
pub mod model;
pub mod pipeline;
pub mod simgen;
pub mod telemetry;

pub use error::{Error, Result};
