//! Experiment harness: configuration, MNIST ingestion and training, and the
//! CSV/SVG artifacts of each experiment kind.

pub mod config;
pub mod idx;
pub mod mnist;
pub mod output;
pub mod runner;
pub mod train;
