//! Ingest, analyze, clean and re-execute R replication packages.

pub mod cleaner;
pub mod encoding;
pub mod ingest;
pub mod metrics;
pub mod rsource;
pub mod executor;
pub mod results;
