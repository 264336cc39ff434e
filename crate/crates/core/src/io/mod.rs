//! File formats: line-oriented text for networks, drives, labels and
//! results, little-endian binary for model checkpoints, TOML for
//! configuration. Every write goes to a temporary file that is renamed into
//! place.

mod checkpoint;
mod config;
mod drive;
mod network;
mod records;
mod results;

use std::io::Write;
use std::path::Path;

use crate::error::FormatError;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use config::{read_config, Config, EvaluationSection};
pub use drive::{format_drive, format_labels, parse_drive, parse_labels, read_drive, read_labels, validate_drive, write_drive, write_labels, LabelFile};
pub use network::{format_network, parse_network, read_network, write_network};
pub use results::{format_results, parse_results, read_results, read_results_csv, results_csv, write_results, ResultFile};

fn io_error(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers see either the old or the new content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_error(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}
