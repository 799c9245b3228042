//! Experiment runner and verification harness for `hjb-core`: config
//! ingestion, pipeline stages, invariant suites and CSV tables.

pub mod config;
pub mod experiment;
pub mod tables;
pub mod verify;
