//! On-disk formats: trajectory files, dataset manifests, checkpoints,
//! configuration and raster ingestion.

mod binary;
pub mod checkpoint;
pub mod config;
pub mod ingest;
pub mod manifest;
pub mod snapshot;

pub use checkpoint::{theta_digest, Checkpoint};
pub use config::Config;
pub use manifest::{read_dataset, write_dataset, DatasetManifest};
pub use snapshot::{read_snapshot_file, write_snapshot_file};
