//! IDX container: a big-endian magic `0x0000_08NN` (unsigned bytes, `NN`
//! dimensions), `NN` big-endian `u32` sizes, then the raw payload.

use std::path::Path;

use crate::error::{KfcError, Result};
use crate::linalg::Matrix;
use crate::train::Dataset;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// A parsed unsigned-byte IDX file, payload kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

impl IdxFile {
    pub fn magic(&self) -> u32 {
        0x0800 | self.dims.len() as u32
    }

    pub fn is_images(&self) -> bool {
        self.dims.len() == 3
    }

    /// One row per image, pixels scaled by 1/255.
    pub fn images(&self) -> Result<Matrix> {
        if !self.is_images() {
            return Err(KfcError::Data(format!("expected a 3-D image file, found {} dimensions", self.dims.len())));
        }
        let (n, features) = (self.dims[0] as usize, (self.dims[1] * self.dims[2]) as usize);
        Matrix::new(n, features, self.payload.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        if self.dims.len() != 1 {
            return Err(KfcError::Data(format!("expected a 1-D label file, found {} dimensions", self.dims.len())));
        }
        Ok(self.payload.iter().map(|&b| usize::from(b)).collect())
    }
}

/// Parses an image (`0x803`) or label (`0x801`) file; errors carry the byte offset.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    let word = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| KfcError::Parse { offset, msg: format!("header truncated: file has {} bytes", bytes.len()) })
    };
    let magic = word(0)?;
    let ndims = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        _ => {
            return Err(KfcError::Parse {
                offset: 0,
                msg: format!("bad magic {magic:#010x}; expected {IMAGES_MAGIC:#010x} or {LABELS_MAGIC:#010x}"),
            })
        }
    };
    let mut dims = Vec::with_capacity(ndims);
    let mut expected: usize = 1;
    for i in 0..ndims {
        let offset = 4 + 4 * i;
        let d = word(offset)?;
        expected = expected
            .checked_mul(d as usize)
            .ok_or_else(|| KfcError::Parse { offset, msg: "dimension product overflows".into() })?;
        dims.push(d);
    }
    let header = 4 + 4 * ndims;
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(KfcError::Parse {
            offset: header,
            msg: format!("payload length {actual} bytes, expected {expected} from dims {dims:?}"),
        });
    }
    Ok(IdxFile { dims, payload: bytes[header..].to_vec() })
}

pub fn write_idx(file: &IdxFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * file.dims.len() + file.payload.len());
    out.extend_from_slice(&file.magic().to_be_bytes());
    for d in &file.dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&file.payload);
    out
}

pub fn read_idx(path: &Path) -> Result<IdxFile> {
    let bytes = std::fs::read(path).map_err(|e| KfcError::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_idx(&bytes).map_err(|e| KfcError::Data(format!("{}: {e}", path.display())))
}

pub const MNIST_FILES: [&str; 4] =
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

/// MNIST training and test sets.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads the four uncompressed MNIST IDX files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<Mnist> {
    let missing: Vec<&str> = MNIST_FILES.iter().copied().filter(|f| !dir.join(f).is_file()).collect();
    if !missing.is_empty() {
        return Err(KfcError::Data(format!("missing MNIST files in {}: {}", dir.display(), missing.join(", "))));
    }
    let pair = |images: &str, labels: &str| -> Result<Dataset> {
        let img = read_idx(&dir.join(images))?;
        let lab = read_idx(&dir.join(labels))?;
        if img.dims.len() != 3 || img.dims[1] != 28 || img.dims[2] != 28 {
            return Err(KfcError::Data(format!("{images}: expected 28x28 images, dims {:?}", img.dims)));
        }
        Dataset::new(img.images()?, lab.labels()?, 10).map_err(|e| KfcError::Data(format!("{images}/{labels}: {e}")))
    };
    Ok(Mnist { train: pair(MNIST_FILES[0], MNIST_FILES[1])?, test: pair(MNIST_FILES[2], MNIST_FILES[3])? })
}
