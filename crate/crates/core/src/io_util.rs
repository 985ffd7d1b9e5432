//! File helpers shared by the stage writers: atomic replace, content hashing,
//! and the little-endian `f32` matrix container used for embeddings and node
//! features.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::{Error, NodeKind, Result};

const MATRIX_MAGIC: &[u8; 4] = b"DDMX";
const MATRIX_VERSION: u32 = 1;
const MATRIX_HEADER_LEN: usize = 4 + 4 + 1 + 8 + 8 + 8;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

/// Header of a persisted matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixHeader {
    pub kind: NodeKind,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
}

/// Encodes a matrix as header + row-major `f32` values.
pub fn encode_matrix(header: MatrixHeader, values: &Array2<f64>) -> Vec<u8> {
    assert_eq!(values.dim(), (header.rows, header.cols));
    let mut out = Vec::with_capacity(MATRIX_HEADER_LEN + 4 * values.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.push(header.kind.tag());
    out.extend_from_slice(&(header.rows as u64).to_le_bytes());
    out.extend_from_slice(&(header.cols as u64).to_le_bytes());
    out.extend_from_slice(&header.seed.to_le_bytes());
    for v in values.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_matrix(path: &Path, bytes: &[u8]) -> Result<(MatrixHeader, Array2<f64>)> {
    if bytes.len() < MATRIX_HEADER_LEN || &bytes[..4] != MATRIX_MAGIC {
        return Err(Error::format(path, "not a matrix file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MATRIX_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let kind = NodeKind::from_tag(bytes[8])
        .ok_or_else(|| Error::format(path, format!("unknown kind tag {}", bytes[8])))?;
    let rows = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[17..25].try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(bytes[25..33].try_into().unwrap());
    let body = &bytes[MATRIX_HEADER_LEN..];
    if body.len() != rows * cols * 4 {
        return Err(Error::format(
            path,
            format!("expected {} value bytes, found {}", rows * cols * 4, body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let matrix = Array2::from_shape_vec((rows, cols), values).expect("length checked");
    Ok((
        MatrixHeader {
            kind,
            rows,
            cols,
            seed,
        },
        matrix,
    ))
}

pub fn to_json_pretty<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}
