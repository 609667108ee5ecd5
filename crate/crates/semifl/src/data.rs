//! MNIST ingestion (IDX format) and the per-sample payload arithmetic.
//!
//! Images and labels are kept as the raw bytes they arrive in; features are
//! scaled into [0,1] and labels one-hot encoded on access. Keeping the bytes
//! makes round-tripping a dataset back to disk bit-exact and keeps the
//! 60,000-image training set under 50 MB in memory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// IDX magic number for unsigned-byte rank-3 tensors (image files).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// IDX magic number for unsigned-byte rank-1 tensors (label files).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
/// Environment variable naming the directory that holds the IDX files.
pub const DATA_DIR_ENV: &str = "SEMIFL_DATA_DIR";

/// Errors raised while reading IDX files.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected IDX magic {expected:#010x}, found {got:#010x}")]
    BadMagic { path: PathBuf, expected: u32, got: u32 },
    #[error("{path}: file ends at byte {offset}, but {needed} bytes are required")]
    TruncatedFile { path: PathBuf, offset: usize, needed: usize },
    #[error("image file holds {images} samples but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
}

/// Which half of the corpus a dataset represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// A labeled image corpus: raw pixel bytes plus class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub split: Split,
    pub rows: usize,
    pub cols: usize,
    /// Number of distinct classes (10 for MNIST digits).
    pub class_count: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Flattened image size (784 for 28×28 MNIST).
    pub fn feature_dim(&self) -> usize {
        self.rows * self.cols
    }

    /// Raw pixel bytes of sample `i`.
    pub fn pixel_row(&self, i: usize) -> &[u8] {
        let d = self.feature_dim();
        &self.pixels[i * d..(i + 1) * d]
    }

    /// Feature vector of sample `i`, scaled into [0,1] by 1/255.
    pub fn feature(&self, i: usize) -> Vec<f64> {
        self.pixel_row(i).iter().map(|&b| b as f64 / 255.0).collect()
    }

    /// Class index of sample `i`.
    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// One-hot label vector of sample `i`.
    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.class_count];
        y[self.label(i)] = 1.0;
        y
    }

    /// (features, one-hot label) pair of sample `i`.
    pub fn sample(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        (self.feature(i), self.one_hot(i))
    }

    /// Writes the dataset back to a pair of IDX files, byte-identical to the
    /// inputs it was loaded from.
    pub fn save_idx(&self, images_path: &Path, labels_path: &Path) -> Result<(), DataError> {
        write_idx_images(images_path, self.rows, self.cols, &self.pixels)?;
        write_idx_labels(labels_path, &self.labels)?;
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            offset: bytes.len(),
            needed: end,
        });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Loads an MNIST-style dataset from an IDX image file and IDX label file.
///
/// Headers are big-endian; pixel bytes become features in [0,1] (scaled by
/// 1/255), labels become one-hot vectors over `class_count = 10` classes.
pub fn load_mnist_idx(
    images_path: &Path,
    labels_path: &Path,
    split: Split,
) -> Result<Dataset, DataError> {
    let image_bytes = read_file(images_path)?;
    let magic = read_u32_be(&image_bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let n_images = read_u32_be(&image_bytes, 4, images_path)? as usize;
    let rows = read_u32_be(&image_bytes, 8, images_path)? as usize;
    let cols = read_u32_be(&image_bytes, 12, images_path)? as usize;
    let needed = 16 + n_images * rows * cols;
    if image_bytes.len() < needed {
        return Err(DataError::TruncatedFile {
            path: images_path.to_path_buf(),
            offset: image_bytes.len(),
            needed,
        });
    }
    let pixels = image_bytes[16..needed].to_vec();

    let label_bytes = read_file(labels_path)?;
    let magic = read_u32_be(&label_bytes, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let n_labels = read_u32_be(&label_bytes, 4, labels_path)? as usize;
    let needed = 8 + n_labels;
    if label_bytes.len() < needed {
        return Err(DataError::TruncatedFile {
            path: labels_path.to_path_buf(),
            offset: label_bytes.len(),
            needed,
        });
    }
    let labels = label_bytes[8..needed].to_vec();

    if n_images != n_labels {
        return Err(DataError::CountMismatch { images: n_images, labels: n_labels });
    }
    Ok(Dataset { split, rows, cols, class_count: 10, pixels, labels })
}

/// Writes a rank-3 unsigned-byte IDX image file (big-endian headers).
pub fn write_idx_images(
    path: &Path,
    rows: usize,
    cols: usize,
    pixels: &[u8],
) -> Result<(), DataError> {
    assert!(rows > 0 && cols > 0, "image dimensions must be positive");
    assert_eq!(pixels.len() % (rows * cols), 0, "pixel buffer must hold whole images");
    let n = pixels.len() / (rows * cols);
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(n as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Writes a rank-1 unsigned-byte IDX label file (big-endian headers).
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    std::fs::write(path, bytes).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Standard MNIST file names for a split, rooted at `dir`.
pub fn mnist_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    match split {
        Split::Train => {
            (dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))
        }
        Split::Test => (dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte")),
    }
}

/// Loads one split of MNIST from the standard file names under `dir`.
pub fn load_mnist_split(dir: &Path, split: Split) -> Result<Dataset, DataError> {
    let (images, labels) = mnist_paths(dir, split);
    load_mnist_idx(&images, &labels, split)
}

/// Data directory from the environment, if configured.
pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

/// Payload size of one uploaded sample: every feature and label entry is
/// quantized to `bits_per_entry` bits, so the sample costs
/// `dims · bits_per_entry` bits on the air.
pub fn bits_per_sample(dims: u64, bits_per_entry: u64) -> u64 {
    assert!(dims > 0 && bits_per_entry > 0, "positive payload dimensions required");
    dims * bits_per_entry
}
