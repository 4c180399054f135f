//! Datasets, the IDX file format, and seeded mini-batch sampling.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnet::Tensor2;
use crate::rng::{streams, RngStream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Feature matrix plus integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor2,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor2, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape("Dataset labels", features.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            features,
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

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Contiguous rows `[start, end)`.
    pub fn range(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            features: self.features.slice_rows(start, end),
            labels: self.labels[start..end].to_vec(),
            num_classes: self.num_classes,
        }
    }

    /// Sample order used by [`Dataset::subset`]: identity without a seed,
    /// otherwise a seeded permutation.
    pub fn subset_order(&self, seed: Option<u64>) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(seed) = seed {
            RngStream::new(seed, streams::SUBSET).shuffle(&mut order);
        }
        order
    }

    /// First `m` samples of [`Dataset::subset_order`]. Subsets for the same seed are
    /// prefixes of each other.
    pub fn subset(&self, m: usize, seed: Option<u64>) -> Result<Dataset> {
        if m > self.len() {
            return Err(Error::InvalidArgument(format!(
                "subset of {m} requested from {} samples",
                self.len()
            )));
        }
        let order = self.subset_order(seed);
        Ok(self.select(&order[..m]))
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn read_idx(path: &Path, magic: u32, ndims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let header = 4 + 4 * ndims;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let found = read_u32_be(&bytes, 0);
    if found != magic {
        return Err(Error::WrongMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndims).map(|i| read_u32_be(&bytes, 4 + 4 * i) as usize).collect();
    let payload: usize = dims.iter().product();
    if bytes.len() < header + payload {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header + payload,
            found: bytes.len(),
        });
    }
    Ok((dims, bytes[header..header + payload].to_vec()))
}

/// Loads an MNIST-style IDX image/label pair. Pixels are divided by 255 and each
/// image is flattened row-major.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (idims, pixels) = read_idx(images_path.as_ref(), IDX_IMAGES_MAGIC, 3)?;
    let (ldims, labels) = read_idx(labels_path.as_ref(), IDX_LABELS_MAGIC, 1)?;
    if idims[0] != ldims[0] {
        return Err(Error::IdxDimensions(format!(
            "{} images but {} labels",
            idims[0], ldims[0]
        )));
    }
    let features = Tensor2::from_vec(
        idims[0],
        idims[1] * idims[2],
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let classes = labels.iter().max().map_or(1, |&m| m + 1).max(10);
    Dataset::new(features, labels, classes)
}

/// Writes `dataset` as an IDX image/label pair with images of `height × width`.
/// Features are mapped back to bytes with `round(255·x)`, so datasets loaded from
/// IDX round-trip exactly.
pub fn write_mnist_idx(
    dataset: &Dataset,
    height: usize,
    width: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if height * width != dataset.dims() {
        return Err(Error::IdxDimensions(format!(
            "{height}x{width} images cannot hold {} features",
            dataset.dims()
        )));
    }
    let n = dataset.len();
    let mut img = Vec::with_capacity(16 + n * dataset.dims());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [n, height, width] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &v in dataset.features().data() {
        img.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in dataset.labels() {
        lab.push(u8::try_from(l).map_err(|_| Error::IdxDimensions(format!("label {l} does not fit a byte")))?);
    }
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    fs::write(images_path, img).map_err(|e| Error::io(format!("writing {}", images_path.display()), e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(format!("writing {}", labels_path.display()), e))?;
    Ok(())
}

/// Spread of the class means around the origin.
const SYNTH_MEAN_SCALE: f64 = 2.0;

/// Class-balanced Gaussian mixture: class means are drawn once from
/// `N(0, 2² I)`, samples are `mean + N(0, I)`. Sample `i` has label `i mod classes`.
pub fn synth_gaussian_mixture(n: usize, dims: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::InvalidArgument(format!(
            "need n >= classes >= 1, got n = {n}, classes = {classes}"
        )));
    }
    let root = RngStream::new(seed, streams::SYNTH_DATA);
    let mut mean_rng = root.substream(0);
    let means: Vec<f64> = (0..classes * dims).map(|_| SYNTH_MEAN_SCALE * mean_rng.normal()).collect();
    let mut rng = root.substream(1);
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for j in 0..dims {
            data.push(means[c * dims + j] + rng.normal());
        }
    }
    Dataset::new(Tensor2::from_vec(n, dims, data)?, labels, classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Reshuffle every epoch and walk the permutation without replacement.
    #[default]
    Epoch,
    /// Every batch is `b` i.i.d. uniform draws.
    WithReplacement,
}

/// One mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Tensor2,
    pub labels: Vec<usize>,
}

/// Seeded mini-batch sampler. Batch `k` depends only on `(seed, n, b, mode, k)`.
///
/// In epoch mode a new permutation is drawn at the start of each epoch and
/// consumed in slices of `b`; a trailing partial batch is dropped, so an epoch is
/// `⌊n/b⌋` steps.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    seed: u64,
    batch_size: usize,
    mode: SamplingMode,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    draws: u64,
}

impl BatchSampler {
    pub fn new(seed: u64, batch_size: usize, mode: SamplingMode) -> Self {
        BatchSampler {
            seed,
            batch_size,
            mode,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            draws: 0,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n / self.batch_size.max(1)
    }

    pub fn next_indices(&mut self, n: usize) -> Result<Vec<usize>> {
        let b = self.batch_size;
        // i.i.d. draws are well defined for any b; only a shuffled epoch needs b ≤ n
        let too_large = b > n && self.mode == SamplingMode::Epoch;
        if b == 0 || n == 0 || too_large {
            return Err(Error::BatchTooLarge { batch: b, n });
        }
        match self.mode {
            SamplingMode::WithReplacement => {
                let mut rng = RngStream::new(self.seed, streams::SAMPLER).substream(self.draws);
                self.draws += 1;
                Ok((0..b).map(|_| rng.index(n)).collect())
            }
            SamplingMode::Epoch => {
                if self.order.len() != n || self.cursor + b > n {
                    self.order = (0..n).collect();
                    RngStream::new(self.seed, streams::SAMPLER)
                        .substream(self.epoch)
                        .shuffle(&mut self.order);
                    self.epoch += 1;
                    self.cursor = 0;
                }
                let out = self.order[self.cursor..self.cursor + b].to_vec();
                self.cursor += b;
                Ok(out)
            }
        }
    }

    pub fn next_batch(&mut self, dataset: &Dataset) -> Result<Batch> {
        let indices = self.next_indices(dataset.len())?;
        Ok(Batch {
            features: dataset.features().gather_rows(&indices),
            labels: indices.iter().map(|&i| dataset.labels()[i]).collect(),
            indices,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_bytes(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    fn idx_header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn loads_constructed_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = idx_header(IDX_IMAGES_MAGIC, &[2, 28, 28]);
        img.extend(std::iter::repeat_n(255u8, 2 * 784));
        let mut lab = idx_header(IDX_LABELS_MAGIC, &[2]);
        lab.extend_from_slice(&[0, 9]);
        let ip = write_bytes(dir.path(), "img", &img);
        let lp = write_bytes(dir.path(), "lab", &lab);
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dims(), 784);
        assert!(ds.features().data().iter().all(|&v| v == 1.0));
        assert_eq!(ds.labels(), &[0, 9]);
    }

    #[test]
    fn distinct_errors_for_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut lab = idx_header(IDX_LABELS_MAGIC, &[1]);
        lab.push(3);
        let lp = write_bytes(dir.path(), "lab", &lab);

        // labels magic in the image slot
        let wrong = write_bytes(dir.path(), "wrong", &lab);
        assert!(matches!(load_mnist_idx(&wrong, &lp), Err(Error::WrongMagic { found: 0x801, .. })));

        let mut short = idx_header(IDX_IMAGES_MAGIC, &[1, 28, 28]);
        short.extend(std::iter::repeat_n(0u8, 100));
        let sp = write_bytes(dir.path(), "short", &short);
        assert!(matches!(load_mnist_idx(&sp, &lp), Err(Error::Truncated { .. })));

        let mut two = idx_header(IDX_IMAGES_MAGIC, &[2, 28, 28]);
        two.extend(std::iter::repeat_n(0u8, 2 * 784));
        let tp = write_bytes(dir.path(), "two", &two);
        assert!(matches!(load_mnist_idx(&tp, &lp), Err(Error::IdxDimensions(_))));
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RngStream::new(1, 1);
        let n = 5;
        let feats: Vec<f64> = (0..n * 12).map(|_| rng.index(256) as f64 / 255.0).collect();
        let ds = Dataset::new(Tensor2::from_vec(n, 12, feats).unwrap(), vec![0, 1, 9, 4, 4], 10).unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_mnist_idx(&ds, 3, 4, &ip, &lp).unwrap();
        let back = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_gaussian_mixture(4, 2, 2, 7).unwrap();
        let b = synth_gaussian_mixture(4, 2, 2, 7).unwrap();
        assert_eq!(a, b);
        let bits: Vec<u64> = a.features().data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.features().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, bits_b);

        let one = synth_gaussian_mixture(10, 3, 1, 0).unwrap();
        assert!(one.labels().iter().all(|&l| l == 0));

        let big = synth_gaussian_mixture(1000, 3, 4, 1).unwrap();
        for c in 0..4 {
            assert_eq!(big.labels().iter().filter(|&&l| l == c).count(), 250);
        }
        assert!(synth_gaussian_mixture(2, 3, 4, 1).is_err());
    }

    #[test]
    fn full_batch_epoch_returns_everything() {
        let ds = synth_gaussian_mixture(10, 2, 2, 0).unwrap();
        let mut s = BatchSampler::new(3, 10, SamplingMode::Epoch);
        let b = s.next_batch(&ds).unwrap();
        let mut idx = b.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
        assert_eq!(b.features.rows(), 10);
    }

    #[test]
    fn batch_larger_than_dataset_is_rejected() {
        let ds = synth_gaussian_mixture(4, 2, 2, 0).unwrap();
        let mut s = BatchSampler::new(0, 5, SamplingMode::Epoch);
        assert!(matches!(s.next_batch(&ds), Err(Error::BatchTooLarge { batch: 5, n: 4 })));
    }

    #[test]
    fn same_seed_same_sequence() {
        for mode in [SamplingMode::Epoch, SamplingMode::WithReplacement] {
            let mut a = BatchSampler::new(9, 3, mode);
            let mut b = BatchSampler::new(9, 3, mode);
            for _ in 0..20 {
                assert_eq!(a.next_indices(11).unwrap(), b.next_indices(11).unwrap());
            }
        }
    }

    #[test]
    fn subsets_are_prefixes() {
        let ds = synth_gaussian_mixture(50, 2, 5, 2).unwrap();
        let small = ds.subset(10, Some(4)).unwrap();
        let large = ds.subset(30, Some(4)).unwrap();
        assert_eq!(small, large.range(0, 10));
    }
}
