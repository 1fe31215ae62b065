//! Smartphone battery telemetry analytics: charging-event segmentation,
//! per-SOC curves, charging-technique and fuel-gauge classification, and
//! user-behavior detection, plus a synthetic trace generator with known
//! ground truth.

pub mod behavior;
pub mod classification;
pub mod config;
pub mod curves;
pub mod domain;
pub mod error;
pub mod export;
pub mod ingestion;
pub mod pipeline;
pub mod report;
pub mod segmentation;
pub mod synthgen;

pub use error::{Error, Result};
