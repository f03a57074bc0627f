//! Labeled image datasets, binary loaders and non-IID client partitioning.

mod cifar;
mod idx;
mod partition;

pub use cifar::{load_cifar10, load_cifar10_split, parse_cifar10_batch, CIFAR_RECORD_LEN};
pub use idx::{
    load_mnist, load_mnist_dir, parse_idx_images, parse_idx_labels, read_maybe_gzip, IdxImages,
};
pub use partition::{
    dirichlet_partition, disjoint_partition, holdout_balanced_test, holdout_indices,
    local_split, partition, ClientSilo, GlobalTestSet, PartitionKind, PartitionSpec,
};

use crate::error::{Error, Result};
use crate::nn::{Batch, DenseMatrix};

/// Images stored as fixed-length byte vectors, plus class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    pixels: Vec<u8>,
    sample_len: usize,
    labels: Vec<u8>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(pixels: Vec<u8>, sample_len: usize, labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        if sample_len == 0 {
            return Err(Error::InvalidArgument("sample length must be positive".into()));
        }
        Error::check_len("dataset pixels", labels.len() * sample_len, pixels.len())?;
        if let Some(&label) = labels.iter().find(|&&l| usize::from(l) >= num_classes) {
            return Err(Error::InvalidLabel {
                label: label.into(),
                num_classes,
            });
        }
        Ok(Self {
            pixels,
            sample_len,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.sample_len
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &[u8] {
        &self.pixels[index * self.sample_len..(index + 1) * self.sample_len]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[usize::from(l)] += 1;
        }
        counts
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(indices.len() * self.sample_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Ok(Self {
            pixels,
            sample_len: self.sample_len,
            labels,
            num_classes: self.num_classes,
        })
    }

    /// `a` followed by `b`.
    pub fn concat(a: &Self, b: &Self) -> Result<Self> {
        Error::check_len("concatenated sample length", a.sample_len, b.sample_len)?;
        Error::check_len("concatenated class count", a.num_classes, b.num_classes)?;
        let mut pixels = a.pixels.clone();
        pixels.extend_from_slice(&b.pixels);
        let mut labels = a.labels.clone();
        labels.extend_from_slice(&b.labels);
        Ok(Self {
            pixels,
            sample_len: a.sample_len,
            labels,
            num_classes: a.num_classes,
        })
    }

    /// The first `n` samples (or all of them).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            pixels: self.pixels[..n * self.sample_len].to_vec(),
            sample_len: self.sample_len,
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }

    /// Normalized mini-batch of the samples at `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let mut values = Vec::with_capacity(indices.len() * self.sample_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            values.extend(self.image(i).iter().map(|&b| scale_byte(b)));
            labels.push(usize::from(self.labels[i]));
        }
        Batch::new(
            DenseMatrix::new(indices.len(), self.sample_len, values)?,
            labels,
            self.num_classes,
        )
    }
}

fn scale_byte(b: u8) -> f64 {
    f64::from(b) / 255.0
}

/// Every sample scaled to `[0, 1]` by `/255`, one row per sample.
pub fn normalize(dataset: &LabeledDataset) -> DenseMatrix {
    DenseMatrix::from_fn(dataset.len(), dataset.sample_len, |r, c| {
        scale_byte(dataset.pixels[r * dataset.sample_len + c])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_scales_bytes() {
        let ds = LabeledDataset::new(vec![0, 255, 128], 3, vec![1], 2).unwrap();
        let m = normalize(&ds);
        assert_eq!(m.row(0)[0], 0.0);
        assert_eq!(m.row(0)[1], 1.0);
        assert!((m.row(0)[2] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn rejects_inconsistent_construction() {
        assert!(LabeledDataset::new(vec![0; 5], 3, vec![0, 1], 2).is_err());
        assert!(matches!(
            LabeledDataset::new(vec![0; 3], 3, vec![2], 2),
            Err(Error::InvalidLabel { label: 2, .. })
        ));
    }

    #[test]
    fn select_and_concat() {
        let ds = LabeledDataset::new(vec![1, 2, 3, 4, 5, 6], 2, vec![0, 1, 0], 2).unwrap();
        let picked = ds.select(&[2, 0]).unwrap();
        assert_eq!(picked.image(0), &[5, 6]);
        assert_eq!(picked.labels(), &[0, 0]);
        let both = LabeledDataset::concat(&ds, &picked).unwrap();
        assert_eq!(both.len(), 5);
        assert_eq!(both.class_counts(), vec![4, 1]);
        assert!(ds.select(&[3]).is_err());
    }
}
