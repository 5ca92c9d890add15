//! IDX image/label files (plain or gzip).

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;
use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: bad magic number 0x{found:08x} (expected 0x{expected:08x})")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("{path}: truncated file ({got} bytes, need {needed})")]
    Truncated { path: PathBuf, needed: usize, got: usize },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: label {label} at index {index} is not a digit class")]
    BadLabel { path: PathBuf, index: usize, label: u8 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IdxError {
    /// Stable short code per failure kind.
    pub fn code(&self) -> &'static str {
        match self {
            IdxError::BadMagic { .. } => "idx-bad-magic",
            IdxError::Truncated { .. } => "idx-truncated",
            IdxError::CountMismatch { .. } => "idx-count-mismatch",
            IdxError::BadLabel { .. } => "idx-bad-label",
            IdxError::Io { .. } => "idx-io",
        }
    }
}

/// Magic number plus big-endian dimension sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    /// Parses the header at the start of `bytes`.
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self, IdxError> {
        let truncated = |needed| IdxError::Truncated {
            path: path.to_path_buf(),
            needed,
            got: bytes.len(),
        };
        if bytes.len() < 4 {
            return Err(truncated(4));
        }
        let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
        let ndims = (magic & 0xff) as usize;
        let len = 4 + 4 * ndims;
        if bytes.len() < len {
            return Err(truncated(len));
        }
        let dims = (0..ndims)
            .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().unwrap()))
            .collect();
        Ok(Self { magic, dims })
    }

    pub fn len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }

    fn payload_len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

/// Reads a file, inflating it when it starts with the gzip signature.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io = |source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn parse_checked(bytes: &[u8], path: &Path, expected: u32) -> Result<IdxHeader, IdxError> {
    let header = IdxHeader::parse(bytes, path)?;
    if header.magic != expected {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found: header.magic,
        });
    }
    let needed = header.len() + header.payload_len();
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            needed,
            got: bytes.len(),
        });
    }
    Ok(header)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Flattened images in `[0, 1]` with digit labels.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl ImageDataset {
    pub fn new(images: Array2<f64>, labels: Vec<u8>, split: Split) -> crate::Result<Self> {
        if images.nrows() != labels.len() {
            return Err(IdxError::CountMismatch {
                images: images.nrows(),
                labels: labels.len(),
            }
            .into());
        }
        if images.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(crate::error::invalid("pixel values must lie in [0, 1]"));
        }
        if let Some(index) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
            return Err(crate::error::invalid(format!(
                "label {} at index {index}",
                labels[index]
            )));
        }
        Ok(Self { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.images.ncols()
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }
}

/// Loads an image/label pair, keeping at most `limit` samples.
pub fn load_idx_dataset(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
    split: Split,
) -> Result<ImageDataset, IdxError> {
    let img_bytes = read_maybe_gz(images_path)?;
    let lbl_bytes = read_maybe_gz(labels_path)?;
    let ih = parse_checked(&img_bytes, images_path, IMAGES_MAGIC)?;
    let lh = parse_checked(&lbl_bytes, labels_path, LABELS_MAGIC)?;
    let count = ih.dims[0] as usize;
    if count != lh.dims[0] as usize {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: lh.dims[0] as usize,
        });
    }
    let pixels = ih.dims[1] as usize * ih.dims[2] as usize;
    let n = limit.map_or(count, |l| l.min(count));
    let body = &img_bytes[ih.len()..ih.len() + n * pixels];
    let images = Array2::from_shape_vec((n, pixels), body.iter().map(|&p| p as f64 / 255.0).collect())
        .expect("shape checked above");
    let labels = lbl_bytes[lh.len()..lh.len() + n].to_vec();
    if let Some(index) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
        return Err(IdxError::BadLabel {
            path: labels_path.to_path_buf(),
            index,
            label: labels[index],
        });
    }
    Ok(ImageDataset { images, labels, split })
}

/// Serializes images (`count x rows*cols` bytes) in IDX layout.
pub fn encode_images(pixels: &[u8], count: usize, rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), count * rows * cols);
    let mut out = IdxHeader {
        magic: IMAGES_MAGIC,
        dims: vec![count as u32, rows as u32, cols as u32],
    }
    .to_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = IdxHeader {
        magic: LABELS_MAGIC,
        dims: vec![labels.len() as u32],
    }
    .to_bytes();
    out.extend_from_slice(labels);
    out
}
