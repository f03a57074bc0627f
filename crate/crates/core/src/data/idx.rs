//! IDX files (the MNIST distribution format).
//!
//! Header: two zero bytes, a type code (`0x08` = unsigned byte), the number of
//! dimensions, then one big-endian `u32` per dimension. Images use
//! `0x00000803` (count, rows, cols); labels use `0x00000801` (count).

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::LabeledDataset;
use crate::error::{Error, FormatError, Result};

const UNSIGNED_BYTE: u8 = 0x08;
const MNIST_CLASSES: usize = 10;

/// Decoded image tensor from an IDX3 file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<usize, FormatError> {
    let chunk = bytes
        .get(offset..offset + 4)
        .ok_or(FormatError::Truncated {
            needed: offset + 4,
            available: bytes.len(),
        })?;
    Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as usize)
}

/// Validate the magic number and return the dimension sizes and payload.
fn parse_header(bytes: &[u8], dims: u8) -> Result<(Vec<usize>, &[u8]), FormatError> {
    let magic = read_u32(bytes, 0)? as u32;
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(FormatError::BadMagic(magic));
    }
    if bytes[2] != UNSIGNED_BYTE || bytes[3] != dims {
        return Err(FormatError::UnsupportedType {
            type_code: bytes[2],
            dims: bytes[3],
        });
    }
    let sizes = (0..usize::from(dims))
        .map(|d| read_u32(bytes, 4 + 4 * d))
        .collect::<Result<Vec<_>, _>>()?;
    let header_len = 4 + 4 * usize::from(dims);
    let payload_len = sizes
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .ok_or(FormatError::Truncated {
            needed: usize::MAX,
            available: bytes.len(),
        })?;
    let payload = &bytes[header_len..];
    if payload.len() < payload_len {
        return Err(FormatError::Truncated {
            needed: header_len.saturating_add(payload_len),
            available: bytes.len(),
        });
    }
    if payload.len() > payload_len {
        return Err(FormatError::TrailingBytes {
            expected: header_len + payload_len,
            actual: bytes.len(),
        });
    }
    Ok((sizes, payload))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, FormatError> {
    let (sizes, payload) = parse_header(bytes, 3)?;
    Ok(IdxImages {
        count: sizes[0],
        rows: sizes[1],
        cols: sizes[2],
        pixels: payload.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, FormatError> {
    let (_, payload) = parse_header(bytes, 1)?;
    Ok(payload.to_vec())
}

/// Read a file, transparently inflating it if it carries a gzip header.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Load an image file and its label file into a 10-class dataset.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = parse_idx_images(&read_maybe_gzip(images_path)?)?;
    let labels = parse_idx_labels(&read_maybe_gzip(labels_path)?)?;
    if images.count != labels.len() {
        return Err(FormatError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        }
        .into());
    }
    if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= MNIST_CLASSES) {
        return Err(FormatError::LabelOutOfRange(bad).into());
    }
    if images.rows == 0 || images.cols == 0 {
        return Err(FormatError::UnsupportedType {
            type_code: UNSIGNED_BYTE,
            dims: 3,
        }
        .into());
    }
    LabeledDataset::new(images.pixels, images.rows * images.cols, labels, MNIST_CLASSES)
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    let candidates = [stem.to_string(), format!("{stem}.gz")];
    candidates
        .iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            Error::io(
                dir.join(stem),
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing IDX file (with or without .gz)"),
            )
        })
}

/// Load the standard `train-*` and `t10k-*` files from a directory.
pub fn load_mnist_dir(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_mnist(
        &find_file(dir, "train-images-idx3-ubyte")?,
        &find_file(dir, "train-labels-idx1-ubyte")?,
    )?;
    let test = load_mnist(
        &find_file(dir, "t10k-images-idx3-ubyte")?,
        &find_file(dir, "t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}
