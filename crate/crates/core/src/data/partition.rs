//! Balanced holdout, non-IID client partitioning and local train/test splits.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose, Rng};

/// How the pool is divided among clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PartitionKind {
    /// Per-class client proportions drawn from `Dir(alpha · 1_K)`.
    Dirichlet { alpha: f64 },
    /// Client `j` owns classes `j*m .. (j+1)*m` for `m = classes_per_client`.
    DisjointConsecutive { classes_per_client: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub num_clients: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::InvalidArgument("at least one client is required".into()));
        }
        match self.kind {
            PartitionKind::Dirichlet { alpha } if !(alpha.is_finite() && alpha > 0.0) => {
                Err(Error::InvalidArgument(format!(
                    "Dirichlet concentration must be finite and positive, got {alpha}"
                )))
            }
            PartitionKind::DisjointConsecutive { classes_per_client }
                if classes_per_client == 0 || classes_per_client * self.num_clients != num_classes =>
            {
                Err(Error::InvalidArgument(format!(
                    "{} clients x {classes_per_client} classes does not cover {num_classes} classes",
                    self.num_clients
                )))
            }
            _ => Ok(()),
        }
    }
}

/// One client's local data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientSilo {
    pub client_id: usize,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Evaluation set with an identical count for every class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalTestSet {
    data: LabeledDataset,
}

impl GlobalTestSet {
    pub fn new(data: LabeledDataset) -> Result<Self> {
        let counts = data.class_counts();
        if counts.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::InvalidArgument(format!(
                "global test set is not class-balanced: {counts:?}"
            )));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &LabeledDataset {
        &self.data
    }

    pub fn into_inner(self) -> LabeledDataset {
        self.data
    }
}

fn indices_by_class(labels: &[u8], num_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[usize::from(l)].push(i);
    }
    by_class
}

/// Split sample indices into `(pool, test)` with exactly `per_class` test
/// samples of each class, chosen by a seeded shuffle. Both lists are sorted.
pub fn holdout_indices(
    labels: &[u8],
    num_classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut pool = Vec::with_capacity(labels.len());
    let mut test = Vec::with_capacity(per_class * num_classes);
    for (class, mut members) in indices_by_class(labels, num_classes).into_iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::InsufficientClass {
                class,
                needed: per_class,
                available: members.len(),
            });
        }
        let mut rng = substream(seed, Purpose::Holdout, &[class as u64]);
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..per_class]);
        pool.extend_from_slice(&members[per_class..]);
    }
    pool.sort_unstable();
    test.sort_unstable();
    Ok((pool, test))
}

/// Carve a class-balanced test set out of `dataset`; the rest is the pool.
pub fn holdout_balanced_test(
    dataset: &LabeledDataset,
    per_class: usize,
    seed: u64,
) -> Result<(LabeledDataset, GlobalTestSet)> {
    let (pool, test) = holdout_indices(dataset.labels(), dataset.num_classes(), per_class, seed)?;
    Ok((dataset.select(&pool)?, GlobalTestSet::new(dataset.select(&test)?)?))
}

/// Largest-remainder apportionment of `total` items by `weights` (summing to 1).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Largest fractional part first; ties go to the lower index.
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Normalized `Gamma(alpha, 1)` draws; redrawn if every draw underflows.
fn dirichlet_draw(alpha: f64, k: usize, rng: &mut Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|d| d / total).collect();
        }
    }
}

const MAX_PARTITION_ATTEMPTS: usize = 10_000;

/// Dirichlet label-skew partition. Returns one sorted index list per client.
///
/// For each class a proportion vector is drawn and the class's (shuffled)
/// samples are dealt out in contiguous runs sized by largest-remainder
/// rounding. If some client ends up with no samples at all, every class
/// vector is redrawn from the continuing stream.
pub fn dirichlet_partition(pool: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    let PartitionKind::Dirichlet { alpha } = spec.kind else {
        return Err(Error::InvalidArgument("dirichlet_partition needs a Dirichlet spec".into()));
    };
    spec.validate(pool.num_classes())?;
    let k = spec.num_clients;
    if k > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "{k} clients cannot all receive samples from a pool of {}",
            pool.len()
        )));
    }
    let by_class = indices_by_class(pool.labels(), pool.num_classes());
    let mut shuffled = by_class.clone();
    let mut shuffle_rng = substream(spec.seed, Purpose::Partition, &[0]);
    for members in &mut shuffled {
        members.shuffle(&mut shuffle_rng);
    }
    let mut rng = substream(spec.seed, Purpose::Partition, &[1]);
    for _ in 0..MAX_PARTITION_ATTEMPTS {
        let mut clients = vec![Vec::new(); k];
        for members in &shuffled {
            let proportions = dirichlet_draw(alpha, k, &mut rng);
            let counts = apportion(members.len(), &proportions);
            let mut start = 0;
            for (client, &n) in clients.iter_mut().zip(&counts) {
                client.extend_from_slice(&members[start..start + n]);
                start += n;
            }
        }
        if clients.iter().all(|c| !c.is_empty()) {
            for c in &mut clients {
                c.sort_unstable();
            }
            return Ok(clients);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not draw a Dirichlet partition with no empty client after {MAX_PARTITION_ATTEMPTS} attempts"
    )))
}

/// Disjoint partition where each client owns a run of consecutive classes.
pub fn disjoint_partition(pool: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    let PartitionKind::DisjointConsecutive { classes_per_client } = spec.kind else {
        return Err(Error::InvalidArgument(
            "disjoint_partition needs a consecutive-class spec".into(),
        ));
    };
    spec.validate(pool.num_classes())?;
    let mut clients = vec![Vec::new(); spec.num_clients];
    for (i, &l) in pool.labels().iter().enumerate() {
        clients[usize::from(l) / classes_per_client].push(i);
    }
    Ok(clients)
}

pub fn partition(pool: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    match spec.kind {
        PartitionKind::Dirichlet { .. } => dirichlet_partition(pool, spec),
        PartitionKind::DisjointConsecutive { .. } => disjoint_partition(pool, spec),
    }
}

/// Stratified train/test split of one client's samples.
///
/// Each class keeps `round(n * ratio)` samples for training; a class with a
/// single sample always goes to training.
pub fn local_split(
    client_id: usize,
    silo_indices: &[usize],
    pool: &LabeledDataset,
    ratio: f64,
    seed: u64,
) -> Result<ClientSilo> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "train ratio must lie in [0, 1], got {ratio}"
        )));
    }
    let mut by_class = vec![Vec::new(); pool.num_classes()];
    for &i in silo_indices {
        let label = *pool.labels().get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("sample index {i} out of range"))
        })?;
        by_class[usize::from(label)].push(i);
    }
    let mut rng = substream(seed, Purpose::LocalSplit, &[client_id as u64]);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut members in by_class {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = if n == 1 {
            1
        } else {
            ((n as f64 * ratio).round() as usize).min(n)
        };
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(ClientSilo {
        client_id,
        train: pool.select(&train)?,
        test: pool.select(&test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels_only(counts: &[usize]) -> LabeledDataset {
        let labels: Vec<u8> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c as u8, n))
            .collect();
        let pixels = (0..labels.len()).map(|i| (i % 256) as u8).collect();
        LabeledDataset::new(pixels, 1, labels, counts.len()).unwrap()
    }

    fn assert_partition(parts: &[Vec<usize>], n: usize) {
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn apportion_sums_exactly() {
        assert_eq!(apportion(10, &[0.25, 0.25, 0.5]), vec![3, 2, 5]);
        assert_eq!(apportion(7, &[1.0 / 3.0; 3]).iter().sum::<usize>(), 7);
        assert_eq!(apportion(0, &[0.5, 0.5]), vec![0, 0]);
    }

    #[test]
    fn holdout_per_class_one() {
        let ds = labels_only(&[5; 10]);
        let (pool, test) = holdout_balanced_test(&ds, 1, 3).unwrap();
        assert_eq!(test.data().len(), 10);
        assert_eq!(test.data().class_counts(), vec![1; 10]);
        assert_eq!(pool.len(), 40);
    }

    #[test]
    fn holdout_zero_is_identity() {
        let ds = labels_only(&[3, 4]);
        let (pool, test) = holdout_balanced_test(&ds, 0, 3).unwrap();
        assert_eq!(pool, ds);
        assert!(test.data().is_empty());
    }

    #[test]
    fn holdout_insufficient_class() {
        let ds = labels_only(&[3, 1]);
        assert!(matches!(
            holdout_balanced_test(&ds, 2, 0),
            Err(Error::InsufficientClass { class: 1, .. })
        ));
    }

    #[test]
    fn single_client_gets_everything() {
        let ds = labels_only(&[4, 5, 6]);
        for alpha in [0.01, 1.0, 100.0] {
            let spec = PartitionSpec {
                kind: PartitionKind::Dirichlet { alpha },
                num_clients: 1,
                seed: 9,
            };
            let parts = dirichlet_partition(&ds, &spec).unwrap();
            assert_eq!(parts, vec![(0..15).collect::<Vec<_>>()]);
        }
    }

    #[test]
    fn too_many_clients() {
        let ds = labels_only(&[1, 1]);
        let spec = PartitionSpec {
            kind: PartitionKind::Dirichlet { alpha: 1.0 },
            num_clients: 3,
            seed: 0,
        };
        assert!(dirichlet_partition(&ds, &spec).is_err());
    }

    #[test]
    fn disjoint_mapping() {
        let ds = labels_only(&[2; 10]);
        let spec = PartitionSpec {
            kind: PartitionKind::DisjointConsecutive { classes_per_client: 2 },
            num_clients: 5,
            seed: 0,
        };
        let parts = disjoint_partition(&ds, &spec).unwrap();
        let classes = |k: usize| {
            let mut c: Vec<u8> = parts[k].iter().map(|&i| ds.labels()[i]).collect();
            c.dedup();
            c
        };
        assert_eq!(classes(0), vec![0, 1]);
        assert_eq!(classes(4), vec![8, 9]);
        assert_partition(&parts, 20);
        let bad = PartitionSpec { num_clients: 4, ..spec };
        assert!(disjoint_partition(&ds, &bad).is_err());
    }

    #[test]
    fn local_split_arithmetic() {
        let ds = labels_only(&[10, 1]);
        let all: Vec<usize> = (0..11).collect();
        let silo = local_split(0, &all, &ds, 0.9, 5).unwrap();
        assert_eq!(silo.train.class_counts(), vec![9, 1]);
        assert_eq!(silo.test.class_counts(), vec![1, 0]);
        let whole = local_split(0, &all, &ds, 1.0, 5).unwrap();
        assert!(whole.test.is_empty());
    }

    proptest! {
        #[test]
        fn dirichlet_is_a_seeded_partition(
            counts in prop::collection::vec(0usize..40, 2..6),
            k in 1usize..5,
            alpha in prop::sample::select(vec![0.01, 0.1, 1.0, 10.0]),
            seed in any::<u64>(),
        ) {
            let ds = labels_only(&counts);
            prop_assume!(ds.len() >= k);
            let spec = PartitionSpec { kind: PartitionKind::Dirichlet { alpha }, num_clients: k, seed };
            let parts = dirichlet_partition(&ds, &spec).unwrap();
            prop_assert_eq!(parts.len(), k);
            prop_assert!(parts.iter().all(|p| !p.is_empty()));
            assert_partition(&parts, ds.len());
            prop_assert_eq!(parts, dirichlet_partition(&ds, &spec).unwrap());
        }

        #[test]
        fn local_split_conserves_labels(
            counts in prop::collection::vec(0usize..30, 1..5),
            ratio in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let ds = labels_only(&counts);
            let all: Vec<usize> = (0..ds.len()).collect();
            let silo = local_split(2, &all, &ds, ratio, seed).unwrap();
            let merged: Vec<usize> = silo.train.class_counts().iter()
                .zip(silo.test.class_counts()).map(|(a, b)| a + b).collect();
            prop_assert_eq!(merged, counts);
        }
    }
}
