//! Persistence: JSON configs, checkpoints, CSV/JSONL metric files and the
//! dataset directory.

mod checkpoint;
mod config;
mod metrics;

use std::path::PathBuf;

pub use checkpoint::{
    checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint, spec_hash, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use config::{config_to_string, parse_config, parse_document, Parsed};
pub use metrics::{create_output, csv_row, MetricFiles, CSV_HEADER, CSV_NAME, JSONL_NAME};

pub const DATA_DIR_VAR: &str = "PLAB_DATA_DIR";

/// Directory holding dataset files: `$PLAB_DATA_DIR`, or `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}
