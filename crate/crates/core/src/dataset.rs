//! MNIST (IDX) and CIFAR-10 (binary batch) ingestion.
//!
//! Pixels are mapped from `[0, 255]` to `[-1, 1]` and center cropped to
//! the requested size. Gzip-compressed files are read transparently.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const IDX_IMAGES: u32 = 2051;
const IDX_LABELS: u32 = 2049;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// (channels, height, width)
    pub dims: (usize, usize, usize),
    pub images: Vec<Array3<f64>>,
    pub labels: Vec<u8>,
}

fn dataset_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Whole file, gunzipped when it starts with the gzip magic.
fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| dataset_err(path, e.to_string()))?;
    if raw.is_empty() {
        return Err(dataset_err(path, "file is empty"));
    }
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| dataset_err(path, format!("gzip: {e}")))?;
        if out.is_empty() {
            return Err(dataset_err(path, "file is empty"));
        }
        return Ok(out);
    }
    Ok(raw)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| dataset_err(path, "truncated header"))
}

/// IDX image file: `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_IMAGES {
        return Err(dataset_err(
            path,
            format!("bad magic {magic:#010x}, expected {IDX_IMAGES:#010x}"),
        ));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let want = n * rows * cols;
    let body = &bytes[16..];
    if body.len() != want {
        return Err(dataset_err(
            path,
            format!(
                "header promises {n} images of {rows}x{cols} ({want} bytes), body has {}",
                body.len()
            ),
        ));
    }
    Ok((n, rows, cols, body.to_vec()))
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_LABELS {
        return Err(dataset_err(
            path,
            format!("bad magic {magic:#010x}, expected {IDX_LABELS:#010x}"),
        ));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(dataset_err(
            path,
            format!("header promises {n} labels, body has {}", body.len()),
        ));
    }
    Ok(body.to_vec())
}

fn normalize(pixel: u8) -> f64 {
    pixel as f64 / 127.5 - 1.0
}

/// Center crop of a `channels x h x w` byte image, normalized.
fn crop(pixels: &[u8], src: (usize, usize, usize), target: (usize, usize)) -> Array3<f64> {
    let (c, h, w) = src;
    let oy = (h - target.0) / 2;
    let ox = (w - target.1) / 2;
    Array3::from_shape_fn((c, target.0, target.1), |(ch, y, x)| {
        normalize(pixels[(ch * h + y + oy) * w + x + ox])
    })
}

fn check_target(path: &Path, src: (usize, usize), target: (usize, usize)) -> Result<()> {
    if target.0 == 0 || target.1 == 0 || target.0 > src.0 || target.1 > src.1 {
        return Err(dataset_err(
            path,
            format!("cannot crop {}x{} images to {}x{}", src.0, src.1, target.0, target.1),
        ));
    }
    Ok(())
}

/// MNIST from an IDX image/label file pair.
pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>, target: (usize, usize)) -> Result<Dataset> {
    let (ipath, lpath) = (images.as_ref(), labels.as_ref());
    let (n, rows, cols, pixels) = read_idx_images(ipath)?;
    let labels = read_idx_labels(lpath)?;
    if labels.len() != n {
        return Err(dataset_err(lpath, format!("{} labels for {n} images", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(dataset_err(lpath, format!("label {bad} outside 0..=9")));
    }
    check_target(ipath, (rows, cols), target)?;
    let size = rows * cols;
    let images = (0..n)
        .map(|i| crop(&pixels[i * size..(i + 1) * size], (1, rows, cols), target))
        .collect();
    Ok(Dataset {
        name: "mnist".into(),
        dims: (1, target.0, target.1),
        images,
        labels,
    })
}

/// CIFAR-10 from one or more binary batch files.
pub fn load_cifar10(batches: &[PathBuf], target: (usize, usize)) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in batches {
        let bytes = read_bytes(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(dataset_err(
                path,
                format!(
                    "{} bytes is not a whole number of {CIFAR_RECORD}-byte records",
                    bytes.len()
                ),
            ));
        }
        check_target(path, (32, 32), target)?;
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            if rec[0] > 9 {
                return Err(dataset_err(path, format!("label {} outside 0..=9", rec[0])));
            }
            labels.push(rec[0]);
            images.push(crop(&rec[1..], (3, 32, 32), target));
        }
    }
    if images.is_empty() {
        return Err(Error::config("dataset.files", "no CIFAR-10 batch files given"));
    }
    Ok(Dataset {
        name: "cifar10".into(),
        dims: (3, target.0, target.1),
        images,
        labels,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
    }

    /// First `n` samples and the rest.
    pub fn split(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::config(
                "dataset.train_size",
                format!("must be in 1..{}, got {n}", self.len()),
            ));
        }
        let part = |r: std::ops::Range<usize>| Dataset {
            name: self.name.clone(),
            dims: self.dims,
            images: self.images[r.clone()].to_vec(),
            labels: self.labels[r].to_vec(),
        };
        Ok((part(0..n), part(n..self.len())))
    }

    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            name: self.name.clone(),
            dims: self.dims,
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Seeded permutation of the sample order.
    pub fn shuffled(&self, seed: u64) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Dataset {
            name: self.name.clone(),
            dims: self.dims,
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// FNV-1a over the IEEE bits of one normalized image.
    pub fn image_checksum(&self, index: usize) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.images[index].iter() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}
