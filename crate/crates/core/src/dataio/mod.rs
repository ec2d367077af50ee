//! Frame ingestion, artifact files, run configuration and manifests.

pub mod checkpoint;
pub mod config;
pub mod fsutil;
pub mod manifest;
pub mod pgm;
