//! Binary cache for generated datasets.
//!
//! Little-endian layout:
//!
//! | field    | type           |
//! |----------|----------------|
//! | magic    | `b"GMDS"`      |
//! | version  | u32 (= 1)      |
//! | n        | u64            |
//! | dim      | u64            |
//! | classes  | u64            |
//! | rows     | u32 (0 = flat) |
//! | cols     | u32 (0 = flat) |
//! | features | n*dim f64      |
//! | labels   | n u32          |

use std::path::Path;

use ndarray::Array2;

use super::{DataError, Dataset, FeatureLayout};

const MAGIC: &[u8; 4] = b"GMDS";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 * 3 + 4 * 2;

pub fn write_cache(data: &Dataset, path: &Path) -> Result<(), DataError> {
    let (rows, cols) = match data.layout() {
        FeatureLayout::Flat => (0u32, 0u32),
        FeatureLayout::Image { rows, cols } => (rows as u32, cols as u32),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * (data.dim() * 8 + 4));
    out.extend_from_slice(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((data.len() as u64).to_le_bytes());
    out.extend((data.dim() as u64).to_le_bytes());
    out.extend((data.classes() as u64).to_le_bytes());
    out.extend(rows.to_le_bytes());
    out.extend(cols.to_le_bytes());
    for v in data.features().iter() {
        out.extend(v.to_le_bytes());
    }
    for &l in data.labels() {
        out.extend((l as u32).to_le_bytes());
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_cache(path: &Path) -> Result<Dataset, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(DataError::InvalidShape("not a dataset cache file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()) as usize;
    if u32_at(4) != VERSION {
        return Err(DataError::InvalidShape(format!("unsupported cache version {}", u32_at(4))));
    }
    let (n, dim, classes) = (u64_at(8), u64_at(16), u64_at(24));
    let (rows, cols) = (u32_at(32) as usize, u32_at(36) as usize);
    let expected = HEADER_LEN + n * dim * 8 + n * 4;
    if bytes.len() != expected {
        return Err(DataError::LengthMismatch(format!(
            "cache has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let feat_end = HEADER_LEN + n * dim * 8;
    let features: Vec<f64> = bytes[HEADER_LEN..feat_end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels: Vec<usize> = bytes[feat_end..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let layout = if rows == 0 && cols == 0 {
        FeatureLayout::Flat
    } else {
        FeatureLayout::Image { rows, cols }
    };
    let features = Array2::from_shape_vec((n, dim), features).expect("length checked");
    Dataset::new(features, labels, classes, layout)
}
