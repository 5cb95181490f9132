//! File formats: PLY clouds, `LPRD` matrices, pipeline weights, and JSON
//! documents for correspondences and transforms.

mod matrix;
mod ply;
mod weights;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use matrix::{read_matrix_file, write_matrix_file, MatrixFile};
pub use ply::{read_ply, read_ply_file, write_ply, write_ply_file, PlyFormat};
pub use weights::{read_weights, read_weights_file, write_weights, write_weights_file, RECORDS_PER_LAYER};

use crate::error::Result;

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty-printed with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
