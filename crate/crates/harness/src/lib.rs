//! Experiment harness: JSON configs in, traces, bound curves, inequality
//! reports and SVG overlays out.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{Options, Status};
pub use config::ExperimentConfig;
