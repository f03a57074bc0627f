//! CIFAR-10 binary batches: 3,073-byte records of one label byte followed by
//! 3,072 channel-major pixel bytes (1024 red, 1024 green, 1024 blue).

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, FormatError, Result};

pub const CIFAR_RECORD_LEN: usize = 3073;
const PIXELS: usize = CIFAR_RECORD_LEN - 1;
const CLASSES: usize = 10;
const RECORDS_PER_FILE: usize = 10_000;

pub fn parse_cifar10_batch(bytes: &[u8]) -> Result<LabeledDataset, FormatError> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(FormatError::Truncated {
            needed: bytes.len().div_ceil(CIFAR_RECORD_LEN) * CIFAR_RECORD_LEN,
            available: bytes.len(),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
        if usize::from(record[0]) >= CLASSES {
            return Err(FormatError::LabelOutOfRange(record[0]));
        }
        labels.push(record[0]);
        pixels.extend_from_slice(&record[1..]);
    }
    Ok(LabeledDataset::new(pixels, PIXELS, labels, CLASSES).expect("record layout is consistent"))
}

fn load_batch_file(path: &Path) -> Result<LabeledDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != RECORDS_PER_FILE * CIFAR_RECORD_LEN {
        return Err(FormatError::Truncated {
            needed: RECORDS_PER_FILE * CIFAR_RECORD_LEN,
            available: bytes.len(),
        }
        .into());
    }
    Ok(parse_cifar10_batch(&bytes)?)
}

/// The five training batches and the test batch, kept apart.
pub fn load_cifar10_split(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut train = load_batch_file(&dir.join("data_batch_1.bin"))?;
    for i in 2..=5 {
        let next = load_batch_file(&dir.join(format!("data_batch_{i}.bin")))?;
        train = LabeledDataset::concat(&train, &next)?;
    }
    let test = load_batch_file(&dir.join("test_batch.bin"))?;
    Ok((train, test))
}

/// All six batch files merged into one 60,000-sample dataset.
pub fn load_cifar10(dir: &Path) -> Result<LabeledDataset> {
    let (train, test) = load_cifar10_split(dir)?;
    LabeledDataset::concat(&train, &test)
}
