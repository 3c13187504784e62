//! MNIST IDX loading, a synthetic stand-in, subsetting and batching.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::BatchPolicy;
use crate::error::{Error, Result};
use crate::model::{Batch, Targets};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const CLASSES: usize = 10;
pub const PIXELS: usize = 784;

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Mnist { images: String, labels: String },
    Synthetic { seed: u64, spread: f64 },
}

/// Labelled images with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    batch: Batch,
    provenance: Provenance,
    checksum: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    pub fn batch(&self) -> &Batch {
        &self.batch
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Hex sha256 of the source bytes (IDX) or of the generated values.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn labels(&self) -> &[usize] {
        match self.batch.targets() {
            Targets::Classes { labels, .. } => labels,
            Targets::Values(_) => unreachable!("datasets are always classification"),
        }
    }

    /// The first `k` examples after a seeded shuffle. The result does not
    /// depend on anything but `(self, k, seed)`.
    pub fn subset(&self, k: usize, seed: u64) -> Result<Dataset> {
        if k == 0 || k > self.len() {
            return Err(Error::invalid(format!(
                "subset size {k} outside [1, {}]",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order.truncate(k);
        let batch = self.batch.select(&order)?;
        let mut h = Sha256::new();
        h.update(self.checksum.as_bytes());
        h.update(k.to_le_bytes());
        h.update(seed.to_le_bytes());
        Ok(Dataset {
            batch,
            provenance: self.provenance.clone(),
            checksum: hex::encode(h.finalize()),
        })
    }

    /// Splits off the last `n - k` examples as a second dataset.
    pub fn split_at(&self, k: usize) -> Result<(Dataset, Dataset)> {
        if k == 0 || k >= self.len() {
            return Err(Error::invalid(format!(
                "split point {k} outside [1, {})",
                self.len()
            )));
        }
        let part = |rows: Vec<usize>, tag: &[u8]| -> Result<Dataset> {
            let mut h = Sha256::new();
            h.update(self.checksum.as_bytes());
            h.update(tag);
            h.update(k.to_le_bytes());
            Ok(Dataset {
                batch: self.batch.select(&rows)?,
                provenance: self.provenance.clone(),
                checksum: hex::encode(h.finalize()),
            })
        };
        Ok((
            part((0..k).collect(), b"head")?,
            part((k..self.len()).collect(), b"tail")?,
        ))
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx {
            path: path.to_path_buf(),
            offset: offset as u64,
            expected: format!("4-byte {what}"),
            found: format!("{} bytes", bytes.len().saturating_sub(offset)),
        })
}

/// Parses one IDX file; returns its dimension sizes and payload.
fn parse_idx<'a>(bytes: &'a [u8], path: &Path, magic: u32, dims: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let found = read_u32(bytes, 0, path, "magic number")?;
    if found != magic {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            offset: 0,
            expected: format!("magic {magic} ({magic:#010x})"),
            found: format!("magic {found} ({found:#010x})"),
        });
    }
    let sizes = (0..dims)
        .map(|d| read_u32(bytes, 4 + 4 * d, path, "dimension size").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * dims;
    let expected = sizes.iter().product::<usize>();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            offset: header as u64,
            expected: format!("{expected} payload bytes"),
            found: format!("{} bytes", payload.len()),
        });
    }
    Ok((sizes, payload))
}

/// Loads an IDX image/label file pair.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ib = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lb = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (isz, pixels) = parse_idx(&ib, ip, IMAGE_MAGIC, 3)?;
    let (lsz, labels) = parse_idx(&lb, lp, LABEL_MAGIC, 1)?;
    if isz[0] != lsz[0] {
        return Err(Error::Idx {
            path: lp.to_path_buf(),
            offset: 4,
            expected: format!("{} labels to match the image count", isz[0]),
            found: format!("{} labels", lsz[0]),
        });
    }
    if isz[0] == 0 {
        return Err(Error::Idx {
            path: ip.to_path_buf(),
            offset: 4,
            expected: "at least one image".into(),
            found: "0".into(),
        });
    }
    if let Some(pos) = labels.iter().position(|&l| l as usize >= CLASSES) {
        return Err(Error::Idx {
            path: lp.to_path_buf(),
            offset: 8 + pos as u64,
            expected: format!("label < {CLASSES}"),
            found: labels[pos].to_string(),
        });
    }
    let (n, d) = (isz[0], isz[1] * isz[2]);
    let inputs = Array2::from_shape_vec(
        (n, d),
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("payload length checked");
    let batch = Batch::new(
        inputs,
        Targets::Classes {
            labels: labels.iter().map(|&l| l as usize).collect(),
            classes: CLASSES,
        },
    )?;
    let mut h = Sha256::new();
    h.update(&ib);
    h.update(&lb);
    Ok(Dataset {
        batch,
        provenance: Provenance::Mnist {
            images: ip.display().to_string(),
            labels: lp.display().to_string(),
        },
        checksum: hex::encode(h.finalize()),
    })
}

/// Encodes images (`n × rows × cols` bytes) as an IDX image file.
pub fn encode_idx_images(pixels: &[u8], n: usize, rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), n * rows * cols, "pixel count");
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Per-pixel noise scale of [`make_synthetic`].
pub const DEFAULT_SPREAD: f64 = 0.3;

/// Seed of the class means. Fixed, so that datasets drawn with different
/// seeds come from the same distribution and can serve as train and test.
const MEANS_SEED: u64 = 0x05EE_D0FC_1A55;

fn class_means() -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(MEANS_SEED);
    Array2::from_shape_simple_fn((CLASSES, PIXELS), || {
        let z: f64 = rng.sample(StandardNormal);
        (0.5 + 0.25 * z).clamp(0.0, 1.0)
    })
}

/// Ten Gaussian blobs in 784 dimensions, clamped to `[0, 1]`.
pub fn make_synthetic(n: usize, seed: u64) -> Result<Dataset> {
    make_synthetic_with(n, seed, DEFAULT_SPREAD)
}

/// [`make_synthetic`] with an explicit per-pixel noise scale.
pub fn make_synthetic_with(n: usize, seed: u64, spread: f64) -> Result<Dataset> {
    if n < CLASSES {
        return Err(Error::invalid(format!("synthetic dataset needs n >= {CLASSES}, got {n}")));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::invalid(format!("spread must be finite and >= 0, got {spread}")));
    }
    let means = class_means();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // round-robin classes in shuffled order: histogram within one of uniform
    let mut labels: Vec<usize> = (0..n).map(|i| i % CLASSES).collect();
    labels.shuffle(&mut rng);
    let mut inputs = Array2::zeros((n, PIXELS));
    for (mut row, &c) in inputs.rows_mut().into_iter().zip(&labels) {
        for (x, &mu) in row.iter_mut().zip(means.row(c)) {
            let z: f64 = rng.sample(StandardNormal);
            *x = (mu + spread * z).clamp(0.0, 1.0);
        }
    }
    let mut h = Sha256::new();
    for v in &inputs {
        h.update(v.to_bits().to_le_bytes());
    }
    for &l in &labels {
        h.update([l as u8]);
    }
    let checksum = hex::encode(h.finalize());
    Ok(Dataset {
        batch: Batch::new(inputs, Targets::Classes { labels, classes: CLASSES })?,
        provenance: Provenance::Synthetic { seed, spread },
        checksum,
    })
}

/// Row indices of the batches of one epoch.
pub fn batch_indices(n: usize, policy: BatchPolicy, epoch: u64) -> Result<Vec<Vec<usize>>> {
    match policy {
        BatchPolicy::Full => Ok(vec![(0..n).collect()]),
        BatchPolicy::Minibatch { size, shuffle_seed } => {
            if size == 0 || size > n {
                return Err(Error::invalid(format!("minibatch size {size} outside [1, {n}]")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
            rng.set_stream(epoch);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            Ok(order.chunks(size).map(<[usize]>::to_vec).collect())
        }
    }
}

/// The batches of one epoch, in order.
pub fn batches(dataset: &Dataset, policy: BatchPolicy, epoch: u64) -> Result<Vec<Batch>> {
    if policy == BatchPolicy::Full {
        return Ok(vec![dataset.batch.clone()]);
    }
    batch_indices(dataset.len(), policy, epoch)?
        .iter()
        .map(|rows| dataset.batch.select(rows))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let px: Vec<u8> = (0..3 * 4).map(|v| (v * 20) as u8).collect();
        let ip = write(dir.path(), "img", &encode_idx_images(&px, 3, 2, 2));
        let lp = write(dir.path(), "lbl", &encode_idx_labels(&[1, 9, 0]));
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.batch().input_dim(), 4);
        assert_eq!(ds.labels(), &[1, 9, 0]);
        assert_eq!(ds.batch().inputs()[[1, 0]], 80.0 / 255.0);
        assert_eq!(ds.checksum(), load_idx(&ip, &lp).unwrap().checksum());
    }

    #[test]
    fn idx_rejects_swapped_magic() {
        let dir = tempfile::tempdir().unwrap();
        let ip = write(dir.path(), "img", &encode_idx_images(&[0; 4], 1, 2, 2));
        let err = load_idx(&ip, &ip).unwrap_err();
        match err {
            Error::Idx { offset, expected, .. } => {
                assert_eq!(offset, 0);
                assert!(expected.contains("2049"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn idx_rejects_truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = encode_idx_images(&[7; 8], 2, 2, 2);
        img.pop();
        let ip = write(dir.path(), "img", &img);
        let lp = write(dir.path(), "lbl", &encode_idx_labels(&[0, 1]));
        let msg = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(msg.contains("8 payload bytes") && msg.contains("7 bytes"), "{msg}");

        let ip = write(dir.path(), "img2", &encode_idx_images(&[7; 8], 2, 2, 2));
        let lp = write(dir.path(), "lbl2", &encode_idx_labels(&[0, 1, 2]));
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Idx { .. })));
        assert!(matches!(load_idx(dir.path().join("nope"), &lp), Err(Error::Io { .. })));
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = make_synthetic(1000, 7).unwrap();
        let b = make_synthetic(1000, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.checksum(), make_synthetic(1000, 8).unwrap().checksum());
        let mut hist = [0usize; CLASSES];
        for &l in a.labels() {
            hist[l] += 1;
        }
        assert!(hist.iter().all(|&c| c == 100), "{hist:?}");
        assert!(a.batch().inputs().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(make_synthetic(9, 0).is_err());
    }

    #[test]
    fn minibatch_partition() {
        let policy = BatchPolicy::Minibatch { size: 32, shuffle_seed: 3 };
        let e0 = batch_indices(100, policy, 0).unwrap();
        let sizes: Vec<usize> = e0.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
        let mut all: Vec<usize> = e0.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(e0, batch_indices(100, policy, 0).unwrap());
        assert_ne!(e0, batch_indices(100, policy, 1).unwrap());
        assert_eq!(batch_indices(100, BatchPolicy::Full, 5).unwrap().len(), 1);
        assert!(batch_indices(10, BatchPolicy::Minibatch { size: 11, shuffle_seed: 0 }, 0).is_err());
    }

    #[test]
    fn subset_is_stable() {
        let ds = make_synthetic(50, 1).unwrap();
        let a = ds.subset(20, 9).unwrap();
        assert_eq!(a, ds.subset(20, 9).unwrap());
        assert_eq!(a.len(), 20);
        assert!(ds.subset(51, 9).is_err());
    }
}
