//! File formats: feature files, PGM masks and the CSV outputs of the
//! matcher and the odometry pipeline.

mod csv;
mod features;
mod mask;

pub use csv::{
    read_ape_csv, read_loss_csv, read_match_csv, read_pair_log_csv, read_trajectory_csv, write_ape_csv, write_loss_csv, write_match_csv,
    write_pair_log_csv, write_trajectory_csv, MatchKind, MatchRow,
};
pub use features::{decode_features, encode_features, load_features, save_features, FeatureHeader, FEATURES_FORMAT};
pub use mask::{apply_mask, MaskImage};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("version mismatch: expected `{expected}`, found `{found}`")]
    VersionMismatch { expected: String, found: String },
    #[error("mask is {found:?} but frame is {expected:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("invalid data: {0}")]
    Invalid(String),
}

impl CodecError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CodecError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| CodecError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CodecError::io(path, e))
}
