//! Reader for the IDX binary format used by MNIST-style datasets.
//!
//! Layout: a big-endian u32 magic (`0x00000803` for 3-D unsigned-byte image
//! arrays, `0x00000801` for 1-D label arrays), one big-endian u32 per
//! dimension, then the raw bytes in row-major order.

use std::path::Path;

use ndarray::Array2;

use super::{DataError, Dataset, FeatureLayout};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::LengthMismatch(format!("header truncated at byte {offset}")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), DataError> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(DataError::BadMagic { expected, found });
    }
    Ok(())
}

/// Parse an IDX image file into `(rows, cols, pixels)` with one row per image.
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, usize, Array2<f64>), DataError> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    let expected = n * rows * cols;
    if body.len() != expected {
        return Err(DataError::LengthMismatch(format!(
            "image payload has {} bytes, header declares {n}x{rows}x{cols} = {expected}",
            body.len()
        )));
    }
    let pixels = Array2::from_shape_vec(
        (n, rows * cols),
        body.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
    .expect("payload length checked");
    Ok((rows, cols, pixels))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, DataError> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(DataError::LengthMismatch(format!(
            "label payload has {} bytes, header declares {n}",
            body.len()
        )));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load a paired images/labels IDX dataset with pixels scaled to `[0, 1]`.
///
/// The class count is one more than the largest label seen (at least 2).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let (rows, cols, pixels) = read_idx_images(&read_file(images_path)?)?;
    let labels = read_idx_labels(&read_file(labels_path)?)?;
    if pixels.nrows() != labels.len() {
        return Err(DataError::LengthMismatch(format!(
            "{} images vs {} labels",
            pixels.nrows(),
            labels.len()
        )));
    }
    let classes = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(pixels, labels, classes, FeatureLayout::Image { rows, cols })
}

#[cfg(test)]
pub(crate) fn encode_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = IMAGES_MAGIC.to_be_bytes().to_vec();
    out.extend((images.len() as u32).to_be_bytes());
    out.extend((rows as u32).to_be_bytes());
    out.extend((cols as u32).to_be_bytes());
    for img in images {
        out.extend(img);
    }
    out
}

#[cfg(test)]
pub(crate) fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}
