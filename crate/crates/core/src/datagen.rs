//! MNIST ingestion and non-IID partitioning across users.
//!
//! Two skew models are combined: per-user dataset sizes follow a Zipf law
//! with exponent `eta`, and per-user class mixes follow a Dirichlet draw with
//! concentration `theta` around the dataset's class priors.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, Purpose};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is outside 0..{NUM_CLASSES}")]
    InvalidLabel { index: usize, label: u8 },
    #[error("cannot give {users} users at least one sample each from {samples} samples")]
    Infeasible { samples: usize, users: usize },
    #[error("invalid partition spec: {0}")]
    InvalidSpec(String),
}

/// Images as flat rows of `dim` features in `[0, 1]`, with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    pixels: Vec<f64>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(dim: usize, pixels: Vec<f64>, labels: Vec<u8>) -> Result<Self, DataError> {
        let images = pixels.len().checked_div(dim).unwrap_or(0);
        if dim == 0 || !pixels.len().is_multiple_of(dim) || images != labels.len() {
            return Err(DataError::CountMismatch { images, labels: labels.len() });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| usize::from(l) >= NUM_CLASSES)
        {
            return Err(DataError::InvalidLabel { index, label });
        }
        Ok(Self { dim, pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.pixels[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[usize::from(l)] += 1;
        }
        counts
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Self { dim: self.dim, pixels, labels }
    }

    /// The first `per_class` samples of every class, in their original order.
    pub fn balanced_prefix(&self, per_class: usize) -> Self {
        let mut taken = [0usize; NUM_CLASSES];
        let indices: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = self.label(i);
                let keep = taken[c] < per_class;
                taken[c] += usize::from(keep);
                keep
            })
            .collect();
        self.select(&indices)
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            dim: self.dim,
            pixels: self.pixels[..n * self.dim].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated { needed: offset + 4, available: bytes.len() })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), DataError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(DataError::BadMagic { expected, found });
    }
    Ok(())
}

/// Parses an IDX3 image file: returns `(count, rows * cols, raw pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8]), DataError> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let dim = read_u32(bytes, 8)? as usize * read_u32(bytes, 12)? as usize;
    let needed = 16 + count * dim;
    if bytes.len() < needed {
        return Err(DataError::Truncated { needed, available: bytes.len() });
    }
    Ok((count, dim, &bytes[16..needed]))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8], DataError> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(DataError::Truncated { needed, available: bytes.len() });
    }
    Ok(&bytes[8..needed])
}

pub fn dataset_from_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<LabeledDataset, DataError> {
    let (count, dim, raw) = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if count != labels.len() {
        return Err(DataError::CountMismatch { images: count, labels: labels.len() });
    }
    if count == 0 {
        return Ok(LabeledDataset { dim: dim.max(1), pixels: Vec::new(), labels: Vec::new() });
    }
    let pixels = raw.iter().map(|&p| f64::from(p) / 255.0).collect();
    LabeledDataset::new(dim, pixels, labels.to_vec())
}

/// Loads an MNIST-format image/label file pair.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DataError> {
    let read =
        |p: &Path| fs::read(p).map_err(|source| DataError::Io { path: p.display().to_string(), source });
    dataset_from_idx(&read(images_path)?, &read(labels_path)?)
}

/// Training subset (first `per_class` of each class) and test set from a
/// directory holding the four standard MNIST file names.
pub fn load_mnist_dir(
    dir: &Path,
    per_class: usize,
    test_limit: Option<usize>,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let train = load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
    let test = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))
        .or_else(|_| load_idx(&dir.join("test-images-idx3-ubyte"), &dir.join("test-labels-idx1-ubyte")))?;
    let test = match test_limit {
        Some(n) => test.truncated(n),
        None => test,
    };
    Ok((train.balanced_prefix(per_class), test))
}

/// Dirichlet concentration, including both limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Concentration {
    /// theta -> 0: each user holds a single random class.
    Zero,
    Finite(f64),
    /// theta -> infinity: each user matches the class priors.
    Infinite,
}

impl fmt::Display for Concentration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("0"),
            Self::Finite(t) => write!(f, "{t}"),
            Self::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Concentration {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "0" | "zero" | "0.0" => Ok(Self::Zero),
            "inf" | "infinity" | "iid" => Ok(Self::Infinite),
            other => match other.parse::<f64>() {
                Ok(t) if t > 0.0 && t.is_finite() => Ok(Self::Finite(t)),
                Ok(t) if t == f64::INFINITY => Ok(Self::Infinite),
                _ => Err(format!("expected a positive number, 0 or inf, got `{other}`")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub num_users: usize,
    pub zipf_eta: f64,
    pub concentration: Concentration,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_users == 0 {
            return Err(DataError::InvalidSpec("num_users must be >= 1".into()));
        }
        if !(self.zipf_eta >= 0.0) {
            return Err(DataError::InvalidSpec(format!("zipf_eta must be >= 0, got {}", self.zipf_eta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserShard {
    pub user_id: usize,
    pub indices: Vec<usize>,
    pub histogram: [usize; NUM_CLASSES],
}

impl UserShard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<UserShard>,
    /// Samples taken from a substitute class because the requested one ran out.
    pub substitutions: usize,
}

/// Largest-remainder rounding of `total * weights[i] / sum(weights)`.
///
/// Ties in the remainder go to lower positions in `tie_order`.
fn apportion(total: usize, weights: &[f64], tie_order: &[usize]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = tie_order.to_vec();
    // Stable sort keeps tie_order among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra)
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-user dataset sizes proportional to `u^-eta`, summing to `total`,
/// with every user holding at least one sample.
pub fn zipf_sizes(total: usize, num_users: usize, eta: f64) -> Result<Vec<usize>, DataError> {
    if num_users == 0 || total < num_users {
        return Err(DataError::Infeasible { samples: total, users: num_users });
    }
    if !(eta >= 0.0) {
        return Err(DataError::InvalidSpec(format!("zipf_eta must be >= 0, got {eta}")));
    }
    let weights: Vec<f64> = (1..=num_users).map(|u| (u as f64).powf(-eta)).collect();
    let order: Vec<usize> = (0..num_users).collect();
    let mut sizes = apportion(total, &weights, &order);
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let donor = (0..num_users).max_by_key(|&u| (sizes[u], std::cmp::Reverse(u))).unwrap();
        sizes[donor] -= 1;
        sizes[empty] = 1;
    }
    Ok(sizes)
}

/// Class shares for one user: `v_n ~ Gamma(theta * prior_n, 1)`, normalized.
pub fn dirichlet_class_shares<R: Rng + ?Sized>(
    concentration: Concentration,
    priors: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let one_hot = |c: usize| {
        let mut q = vec![0.0; priors.len()];
        q[c] = 1.0;
        q
    };
    match concentration {
        Concentration::Infinite => priors.to_vec(),
        Concentration::Zero => one_hot(rng.random_range(0..priors.len())),
        Concentration::Finite(theta) => {
            let draws: Vec<f64> =
                priors
                    .iter()
                    .map(|&p| {
                        if p <= 0.0 {
                            0.0
                        } else {
                            Gamma::new(theta * p, 1.0).map_or(0.0, |g| g.sample(rng))
                        }
                    })
                    .collect();
            let sum: f64 = draws.iter().sum();
            if sum > 0.0 && sum.is_finite() {
                draws.iter().map(|v| v / sum).collect()
            } else {
                // Every gamma draw underflowed: the theta -> 0 behaviour.
                let c = draws.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
                one_hot(c)
            }
        }
    }
}

/// Splits `dataset` into disjoint per-user shards.
///
/// Shard sizes come from [`zipf_sizes`]. Each user's class quota is the
/// largest-remainder rounding of its Dirichlet shares; remainders that tie
/// are resolved cyclically, continuing from the class after the last one
/// that received a rounded-up sample, which keeps equal-prior class pools
/// exact. When a class runs dry the deficit is
/// taken from the class with the most samples left.
pub fn partition(dataset: &LabeledDataset, spec: &PartitionSpec) -> Result<Partition, DataError> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(DataError::Infeasible { samples: 0, users: spec.num_users });
    }
    let sizes = zipf_sizes(dataset.len(), spec.num_users, spec.zipf_eta)?;
    let counts = dataset.class_counts();
    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / dataset.len() as f64).collect();

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for i in 0..dataset.len() {
        pools[dataset.label(i)].push(i);
    }
    for (c, pool) in pools.iter_mut().enumerate() {
        pool.shuffle(&mut stream(spec.seed, Purpose::ClassPool, c as u64, 0));
        // Drawn from the back.
        pool.reverse();
    }

    let mut substitutions = 0;
    let mut tie_offset = 0;
    let mut shards = Vec::with_capacity(spec.num_users);
    for (user_id, &size) in sizes.iter().enumerate() {
        let mut rng = stream(spec.seed, Purpose::ClassShares, user_id as u64, 0);
        let shares = dirichlet_class_shares(spec.concentration, &priors, &mut rng);
        let tie_order: Vec<usize> = (0..NUM_CLASSES).map(|k| (tie_offset + k) % NUM_CLASSES).collect();
        let quotas = apportion(size, &shares, &tie_order);
        let share_sum: f64 = shares.iter().sum();
        let floors: usize = shares.iter().map(|w| (size as f64 * w / share_sum).floor() as usize).sum();
        tie_offset = (tie_offset + size - floors) % NUM_CLASSES;

        let mut indices = Vec::with_capacity(size);
        let mut histogram = [0; NUM_CLASSES];
        let mut deficit = 0;
        for (c, &quota) in quotas.iter().enumerate() {
            let take = quota.min(pools[c].len());
            for _ in 0..take {
                indices.push(pools[c].pop().unwrap());
            }
            histogram[c] += take;
            deficit += quota - take;
        }
        substitutions += deficit;
        while deficit > 0 {
            let Some(c) = (0..NUM_CLASSES)
                .filter(|&c| !pools[c].is_empty())
                .max_by_key(|&c| (pools[c].len(), std::cmp::Reverse(c)))
            else {
                break;
            };
            let take = deficit.min(pools[c].len());
            for _ in 0..take {
                indices.push(pools[c].pop().unwrap());
            }
            histogram[c] += take;
            deficit -= take;
        }
        shards.push(UserShard { user_id, indices, histogram });
    }
    Ok(Partition { shards, substitutions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(payload);
        out
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    /// Synthetic dataset with `per_class` samples of each class; pixel 0 holds the label.
    fn toy_dataset(per_class: usize) -> LabeledDataset {
        let n = per_class * NUM_CLASSES;
        let labels: Vec<u8> = (0..n).map(|i| (i % NUM_CLASSES) as u8).collect();
        let pixels = labels.iter().flat_map(|&l| [f64::from(l) / 9.0, 0.5]).collect();
        LabeledDataset::new(2, pixels, labels).unwrap()
    }

    #[test]
    fn idx_roundtrip_scales_pixels() {
        let images = idx_images(2, 1, 2, &[0, 255, 51, 102]);
        let labels = idx_labels(&[3, 7]);
        let ds = dataset_from_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.image(0), &[0.0, 1.0]);
        assert_eq!(ds.image(1), &[0.2, 0.4]);
        assert_eq!(ds.label(1), 7);
    }

    #[test]
    fn idx_empty_payload() {
        let ds = dataset_from_idx(&idx_images(0, 28, 28, &[]), &idx_labels(&[])).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn idx_errors() {
        let good_labels = idx_labels(&[1]);
        let mut bad = idx_images(1, 1, 1, &[9]);
        bad[3] = 0x01;
        assert!(matches!(
            dataset_from_idx(&bad, &good_labels),
            Err(DataError::BadMagic { expected: IMAGE_MAGIC, found: 0x801 })
        ));
        assert!(matches!(
            dataset_from_idx(&idx_images(2, 1, 1, &[9]), &good_labels),
            Err(DataError::Truncated { needed: 18, available: 17 })
        ));

        let images = idx_images(100, 1, 1, &[0; 100]);
        let labels = idx_labels(&[0; 99]);
        assert!(matches!(
            dataset_from_idx(&images, &labels),
            Err(DataError::CountMismatch { images: 100, labels: 99 })
        ));
        assert!(matches!(
            dataset_from_idx(&idx_images(1, 1, 1, &[0]), &idx_labels(&[12])),
            Err(DataError::InvalidLabel { index: 0, label: 12 })
        ));
        assert!(matches!(dataset_from_idx(&[0, 0], &good_labels), Err(DataError::Truncated { .. })));
    }

    #[test]
    fn zipf_examples() {
        assert_eq!(zipf_sizes(100, 4, 0.0).unwrap(), vec![25, 25, 25, 25]);
        assert_eq!(zipf_sizes(300, 2, 1.0).unwrap(), vec![200, 100]);
        assert_eq!(zipf_sizes(50, 3, f64::INFINITY).unwrap(), vec![48, 1, 1]);
        assert!(matches!(zipf_sizes(2, 3, 0.0), Err(DataError::Infeasible { .. })));
        assert!(zipf_sizes(10, 3, -1.0).is_err());
    }

    #[test]
    fn zipf_conserves_total() {
        for &eta in &[0.0, 0.35, 0.6, 1.0, 1.5, 4.0] {
            for users in 1..30 {
                let sizes = zipf_sizes(2500, users, eta).unwrap();
                assert_eq!(sizes.iter().sum::<usize>(), 2500);
                assert!(sizes.iter().all(|&s| s >= 1));
            }
        }
    }

    #[test]
    fn dirichlet_limits_and_normalization() {
        let priors = vec![0.1; NUM_CLASSES];
        let mut rng = stream(1, Purpose::ClassShares, 0, 0);
        assert_eq!(dirichlet_class_shares(Concentration::Infinite, &priors, &mut rng), priors);
        for _ in 0..50 {
            let q = dirichlet_class_shares(Concentration::Zero, &priors, &mut rng);
            assert_eq!(q.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(q.iter().sum::<f64>(), 1.0);
        }
        for &theta in &[1e-3, 0.5, 10.0, 100.0] {
            let q = dirichlet_class_shares(Concentration::Finite(theta), &priors, &mut rng);
            assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(q.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn concentration_parsing() {
        assert_eq!("inf".parse::<Concentration>().unwrap(), Concentration::Infinite);
        assert_eq!("0".parse::<Concentration>().unwrap(), Concentration::Zero);
        assert_eq!("10".parse::<Concentration>().unwrap(), Concentration::Finite(10.0));
        assert!("-2".parse::<Concentration>().is_err());
        assert!("abc".parse::<Concentration>().is_err());
    }

    #[test]
    fn iid_partition_is_balanced() {
        let ds = toy_dataset(250);
        let spec =
            PartitionSpec { num_users: 20, zipf_eta: 0.0, concentration: Concentration::Infinite, seed: 3 };
        let part = partition(&ds, &spec).unwrap();
        assert_eq!(part.substitutions, 0);
        for shard in &part.shards {
            assert_eq!(shard.len(), 125);
            assert!(shard.histogram.iter().all(|&h| h == 12 || h == 13), "{:?}", shard.histogram);
            for &i in &shard.indices {
                assert!(shard.histogram[ds.label(i)] > 0);
            }
        }
    }

    #[test]
    fn single_class_users() {
        let ds = toy_dataset(250);
        let spec =
            PartitionSpec { num_users: 20, zipf_eta: 0.0, concentration: Concentration::Zero, seed: 11 };
        let part = partition(&ds, &spec).unwrap();
        let mut single = 0;
        for shard in &part.shards {
            let classes = shard.histogram.iter().filter(|&&h| h > 0).count();
            if classes == 1 {
                single += 1;
            }
        }
        // Any user not single-class received spill-over from an exhausted class.
        let spilled = part.shards.len() - single;
        assert!(spilled == 0 || part.substitutions > 0);
        assert!(single >= part.shards.len() / 2);
    }

    #[test]
    fn single_user_gets_everything() {
        let ds = toy_dataset(7);
        let spec =
            PartitionSpec { num_users: 1, zipf_eta: 1.0, concentration: Concentration::Finite(0.3), seed: 0 };
        let part = partition(&ds, &spec).unwrap();
        let mut idx = part.shards[0].indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..ds.len()).collect::<Vec<_>>());
    }

    #[test]
    fn partition_rejects_empty_dataset() {
        let ds = LabeledDataset::new(1, vec![], vec![]).unwrap();
        let spec =
            PartitionSpec { num_users: 1, zipf_eta: 0.0, concentration: Concentration::Infinite, seed: 0 };
        assert!(partition(&ds, &spec).is_err());
    }

    #[test]
    fn balanced_prefix_takes_first_per_class() {
        let ds = toy_dataset(30);
        let sub = ds.balanced_prefix(5);
        assert_eq!(sub.len(), 50);
        assert_eq!(sub.class_counts(), [5; NUM_CLASSES]);
        assert_eq!(sub.image(0), ds.image(0));
    }
}
