//! MNIST in the IDX format.

use std::path::{Path, PathBuf};

use crate::error::{ensure_len, Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";

/// Images are kept as raw bytes and scaled to `[0,1]` when read out.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistDataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    rows: usize,
    cols: usize,
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn ingest(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses an IDX image file: magic, count, rows, cols, then `count·rows·cols` bytes.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    if bytes.len() < 16 {
        return Err(ingest(path, "truncated header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != IMAGES_MAGIC {
        return Err(ingest(
            path,
            format!("bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"),
        ));
    }
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let expected = count * rows * cols;
    let body = &bytes[16..];
    if body.len() != expected {
        return Err(ingest(
            path,
            format!(
                "truncated data: header declares {expected} pixel bytes, file has {}",
                body.len()
            ),
        ));
    }
    Ok((body.to_vec(), rows, cols))
}

/// Parses an IDX label file: magic, count, then `count` bytes.
pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(ingest(path, "truncated header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != LABELS_MAGIC {
        return Err(ingest(
            path,
            format!("bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"),
        ));
    }
    let count = be_u32(bytes, 4) as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(ingest(
            path,
            format!(
                "truncated data: header declares {count} labels, file has {}",
                body.len()
            ),
        ));
    }
    if let Some(pos) = body.iter().position(|&l| l > 9) {
        return Err(ingest(
            path,
            format!("label {} at index {pos} is not a digit", body[pos]),
        ));
    }
    Ok(body.to_vec())
}

pub fn mnist_load_idx(images_path: &Path, labels_path: &Path) -> Result<MnistDataset> {
    let (pixels, rows, cols) = parse_images(&read(images_path)?, images_path)?;
    let labels = parse_labels(&read(labels_path)?, labels_path)?;
    MnistDataset::new(pixels, labels, rows, cols).map_err(|e| match e {
        Error::Shape {
            expected, actual, ..
        } => ingest(
            images_path,
            format!("count mismatch: {expected} images, {actual} labels"),
        ),
        other => other,
    })
}

/// Loads the training split from `dir`.
pub fn mnist_load_dir(dir: &Path) -> Result<MnistDataset> {
    mnist_load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))
}

/// Paths of the training files inside `dir`.
pub fn train_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS))
}

/// `SCALE[b] = b / 255`.
static SCALE: std::sync::LazyLock<[f64; 256]> =
    std::sync::LazyLock::new(|| std::array::from_fn(|b| b as f64 / 255.0));

impl MnistDataset {
    pub fn new(pixels: Vec<u8>, labels: Vec<u8>, rows: usize, cols: usize) -> Result<Self> {
        let size = rows * cols;
        if size == 0 {
            return Err(Error::Config("images must have at least one pixel".into()));
        }
        ensure_len("mnist labels", pixels.len() / size, labels.len())?;
        ensure_len("mnist pixels", labels.len() * size, pixels.len())?;
        Ok(Self {
            pixels,
            labels,
            rows,
            cols,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.rows * self.cols
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        let size = self.image_size();
        &self.pixels[i * size..(i + 1) * size]
    }

    /// Image `i` scaled to `[0,1]`.
    pub fn image(&self, i: usize) -> Vec<f64> {
        self.raw_image(i)
            .iter()
            .map(|&b| SCALE[b as usize])
            .collect()
    }

    /// Writes image `i` with pixel `j` taken from source position
    /// `permutation[j]`.
    pub fn fill_permuted(&self, i: usize, permutation: &[usize], out: &mut [f64]) -> Result<()> {
        let size = self.image_size();
        ensure_len("permutation", size, permutation.len())?;
        ensure_len("image buffer", size, out.len())?;
        let raw = self.raw_image(i);
        for (o, &p) in out.iter_mut().zip(permutation) {
            *o = SCALE[raw[p] as usize];
        }
        Ok(())
    }
}
