use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Error)]
pub enum MnistError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: header promises {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {0} is not a digit")]
    BadLabel(u8),
}

/// Images as `[N, rows * cols]` with pixels scaled to `[0, 1]`, and their
/// class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` examples (all of them if there are fewer).
    pub fn truncate(mut self, n: usize) -> Self {
        if n < self.len() {
            self.images = self.images.slice_rows(0, n);
            self.labels.truncate(n);
        }
        self
    }
}

fn be_u32(bytes: &[u8], word: usize) -> Result<u32, MnistError> {
    let at = word * 4;
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(MnistError::Truncated { expected: at + 4, actual: bytes.len() })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), MnistError> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(MnistError::BadMagic { expected, found });
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8], MnistError> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(MnistError::Truncated { expected, actual: bytes.len() });
    }
    Ok(&bytes[header..expected])
}

/// Parses an IDX3 image file into `[N, rows * cols]` pixels in `[0, 1]`.
pub fn parse_images(bytes: &[u8]) -> Result<Tensor, MnistError> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let n = be_u32(bytes, 1)? as usize;
    let rows = be_u32(bytes, 2)? as usize;
    let cols = be_u32(bytes, 3)? as usize;
    let pixels = payload(bytes, 16, n * rows * cols)?;
    let data = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Ok(Tensor::new([n, rows * cols], data).expect("length checked"))
}

/// Parses an IDX1 label file.
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>, MnistError> {
    check_magic(bytes, LABEL_MAGIC)?;
    let n = be_u32(bytes, 1)? as usize;
    payload(bytes, 8, n)?
        .iter()
        .map(|&l| if l < 10 { Ok(l as usize) } else { Err(MnistError::BadLabel(l)) })
        .collect()
}

fn read(path: &Path) -> Result<Vec<u8>, MnistError> {
    fs::read(path).map_err(|source| MnistError::Io { path: path.to_path_buf(), source })
}

/// Loads a pair of IDX files. No augmentation or normalization beyond
/// scaling pixels by 1/255.
pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset, MnistError> {
    let images = parse_images(&read(images.as_ref())?)?;
    let labels = parse_labels(&read(labels.as_ref())?)?;
    let n = images.shape()[0];
    if n != labels.len() {
        return Err(MnistError::CountMismatch { images: n, labels: labels.len() });
    }
    Ok(Dataset { images, labels })
}

/// The standard training and test splits from a directory holding the four
/// uncompressed MNIST files.
pub fn load_splits(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset), MnistError> {
    let dir = dir.as_ref();
    let train = load_mnist(dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS))?;
    let test = load_mnist(dir.join(TEST_IMAGES), dir.join(TEST_LABELS))?;
    Ok((train, test))
}
