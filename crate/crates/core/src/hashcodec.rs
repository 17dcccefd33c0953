//! Square pixel-grid renderings of hashes.
//!
//! Binary digests become black/white grids (bit 1 is white), one pixel per
//! bit. Byte-valued digests become grayscale grids, one pixel per byte.

use thiserror::Error;

use crate::imaging::ImageBuffer;
use crate::phash::{Algorithm, PerceptualHash};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("bit length {0} is not a perfect square")]
    NonSquareBitLength(usize),
    #[error("byte length {0} is not a perfect square")]
    NonSquareLength(usize),
    #[error("grid has {actual} samples, {algorithm} needs {expected}")]
    DimensionMismatch {
        algorithm: Algorithm,
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelGridMode {
    /// Samples are 0 or 255.
    Binary,
    /// Samples carry arbitrary byte values.
    Byte,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelGrid {
    side: usize,
    samples: Vec<u8>,
    mode: PixelGridMode,
}

impl PixelGrid {
    /// Wraps raw samples; the sample count must be `side * side`.
    pub fn from_samples(side: usize, samples: Vec<u8>, mode: PixelGridMode) -> Option<Self> {
        if side == 0 || samples.len() != side * side {
            return None;
        }
        if mode == PixelGridMode::Binary && samples.iter().any(|&s| s != 0 && s != 255) {
            return None;
        }
        Some(Self { side, samples, mode })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn mode(&self) -> PixelGridMode {
        self.mode
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.samples[row * self.side + col]
    }

    /// The grid as a one-channel image, ready for PGM export.
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::luma(self.side, self.side, self.samples.clone())
            .expect("grid dimensions are valid")
    }

    /// Reads a grid back from a square one-channel image.
    pub fn from_image(img: &ImageBuffer) -> Option<Self> {
        if img.channels() != 1 || img.width() != img.height() {
            return None;
        }
        Self::from_samples(img.width(), img.data().to_vec(), PixelGridMode::Byte)
    }
}

fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r > 0 && r * r == n).then_some(r)
}

pub fn encode_binary_grid(hash: &PerceptualHash) -> Result<PixelGrid, CodecError> {
    let side = exact_sqrt(hash.bit_len()).ok_or(CodecError::NonSquareBitLength(hash.bit_len()))?;
    Ok(PixelGrid {
        side,
        samples: hash.bits().map(|b| if b { 255 } else { 0 }).collect(),
        mode: PixelGridMode::Binary,
    })
}

pub fn encode_byte_grid(bytes: &[u8]) -> Result<PixelGrid, CodecError> {
    let side = exact_sqrt(bytes.len()).ok_or(CodecError::NonSquareLength(bytes.len()))?;
    Ok(PixelGrid {
        side,
        samples: bytes.to_vec(),
        mode: PixelGridMode::Byte,
    })
}

/// Thresholds every sample at 128 (>= 128 is a 1 bit).
pub fn decode_grid(grid: &PixelGrid, algorithm: Algorithm) -> Result<PerceptualHash, CodecError> {
    if grid.samples.len() != algorithm.bits() {
        return Err(CodecError::DimensionMismatch {
            algorithm,
            expected: algorithm.bits(),
            actual: grid.samples.len(),
        });
    }
    Ok(PerceptualHash::from_bits(
        algorithm,
        grid.samples.iter().map(|&s| s >= 128),
    ))
}
