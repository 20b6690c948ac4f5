//! Command-line front end: configuration, dataset ingestion, synthetic
//! benchmark generation, and train/index/run/evaluate orchestration.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod synthbench;
