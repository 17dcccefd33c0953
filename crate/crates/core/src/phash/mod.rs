//! Perceptual hashes and the normalized Hamming distance between them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{resize_box, to_luminance, ImageBuffer};

mod pdq;

pub use pdq::{dct16_from64, pdq, PDQ_DIM};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HashError {
    #[error("algorithm mismatch: {0} vs {1}")]
    AlgorithmMismatch(Algorithm, Algorithm),
    #[error("unknown hash algorithm {0:?}")]
    UnknownAlgorithm(String),
    #[error("malformed hash text: {0}")]
    MalformedText(String),
    #[error("expected {expected} hash bytes, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("invalid threshold {0}/{1}: must lie strictly between 0 and 1")]
    InvalidThreshold(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "ahash64")]
    Ahash64,
    #[serde(rename = "pdq256")]
    Pdq256,
}

impl Algorithm {
    pub const ALL: [Algorithm; 2] = [Algorithm::Ahash64, Algorithm::Pdq256];

    /// Digest length `k` in bits.
    pub const fn bits(self) -> usize {
        match self {
            Self::Ahash64 => 64,
            Self::Pdq256 => 256,
        }
    }

    pub const fn byte_len(self) -> usize {
        self.bits() / 8
    }

    /// Tag used in the hash text form, e.g. `pdq256`.
    pub const fn tag(self) -> &'static str {
        match self {
            Self::Ahash64 => "ahash64",
            Self::Pdq256 => "pdq256",
        }
    }

    /// Numeric code used in the PHIX index header.
    pub const fn code(self) -> u8 {
        match self {
            Self::Ahash64 => 1,
            Self::Pdq256 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::Ahash64),
            2 => Some(Self::Pdq256),
            _ => None,
        }
    }

    /// Hashes `img` with this algorithm.
    pub fn hash(self, img: &ImageBuffer) -> PerceptualHash {
        match self {
            Self::Ahash64 => ahash(img),
            Self::Pdq256 => pdq(img).hash,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = HashError;

    /// Accepts the tag (`ahash64`, `pdq256`) or the short name (`ahash`, `pdq`).
    fn from_str(s: &str) -> Result<Self, HashError> {
        match s.to_ascii_lowercase().as_str() {
            "ahash64" | "ahash" => Ok(Self::Ahash64),
            "pdq256" | "pdq" => Ok(Self::Pdq256),
            _ => Err(HashError::UnknownAlgorithm(s.to_owned())),
        }
    }
}

const MAX_HASH_BYTES: usize = 32;

/// A fixed-length digest. Bit `i` is stored MSB-first: bit 0 is the high bit
/// of byte 0, and bits run row-major over the grid the hash was computed on.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PerceptualHash {
    algorithm: Algorithm,
    // Bytes past `algorithm.byte_len()` are always zero.
    bytes: [u8; MAX_HASH_BYTES],
}

impl PerceptualHash {
    pub fn from_bytes(algorithm: Algorithm, bytes: &[u8]) -> Result<Self, HashError> {
        if bytes.len() != algorithm.byte_len() {
            return Err(HashError::BadLength {
                expected: algorithm.byte_len(),
                actual: bytes.len(),
            });
        }
        let mut buf = [0u8; MAX_HASH_BYTES];
        buf[..bytes.len()].copy_from_slice(bytes);
        Ok(Self {
            algorithm,
            bytes: buf,
        })
    }

    /// Packs `bits` (bit 0 first) into a hash. Panics if the count is wrong.
    pub fn from_bits(algorithm: Algorithm, bits: impl IntoIterator<Item = bool>) -> Self {
        let mut buf = [0u8; MAX_HASH_BYTES];
        let mut n = 0;
        for (i, bit) in bits.into_iter().enumerate() {
            assert!(i < algorithm.bits(), "too many bits for {algorithm}");
            if bit {
                buf[i / 8] |= 0x80 >> (i % 8);
            }
            n = i + 1;
        }
        assert_eq!(n, algorithm.bits(), "wrong bit count for {algorithm}");
        Self {
            algorithm,
            bytes: buf,
        }
    }

    pub fn zero(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            bytes: [0; MAX_HASH_BYTES],
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn bit_len(&self) -> usize {
        self.algorithm.bits()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[..self.algorithm.byte_len()]
    }

    /// `h_i`, the `i`-th bit.
    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.bit_len(), "bit index {i} out of range");
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.bit_len()).map(|i| self.bit(i))
    }

    /// Bitwise complement (same algorithm).
    pub fn complement(&self) -> Self {
        let mut out = *self;
        for b in &mut out.bytes[..self.algorithm.byte_len()] {
            *b = !*b;
        }
        out
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.as_bytes())
    }

    /// Canonical text form, e.g. `ahash64:0f0f0f0f0f0f0f0f`.
    pub fn to_text(&self) -> String {
        format!("{}:{}", self.algorithm.tag(), self.to_hex())
    }
}

impl fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.algorithm.tag(), self.to_hex())
    }
}

impl fmt::Debug for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PerceptualHash({self})")
    }
}

impl FromStr for PerceptualHash {
    type Err = HashError;

    /// Parses `<tag>:<lowercase hex>`. Uppercase hex is rejected so the text
    /// form stays canonical.
    fn from_str(s: &str) -> Result<Self, HashError> {
        let (tag, hex_part) = s
            .split_once(':')
            .ok_or_else(|| HashError::MalformedText(s.to_owned()))?;
        let algorithm = match tag {
            "ahash64" => Algorithm::Ahash64,
            "pdq256" => Algorithm::Pdq256,
            _ => return Err(HashError::UnknownAlgorithm(tag.to_owned())),
        };
        if hex_part.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(HashError::MalformedText(s.to_owned()));
        }
        let bytes = hex::decode(hex_part).map_err(|_| HashError::MalformedText(s.to_owned()))?;
        Self::from_bytes(algorithm, &bytes)
    }
}

impl Serialize for PerceptualHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PerceptualHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Raw and normalized Hamming distance between two digests of length `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HashDistance {
    pub raw: u32,
    pub bits: u32,
}

impl HashDistance {
    /// `δ = raw / k`.
    pub fn normalized(&self) -> f64 {
        f64::from(self.raw) / f64::from(self.bits)
    }
}

/// Hamming distance via popcount of the XOR.
pub fn hamming(a: &PerceptualHash, b: &PerceptualHash) -> Result<HashDistance, HashError> {
    if a.algorithm != b.algorithm {
        return Err(HashError::AlgorithmMismatch(a.algorithm, b.algorithm));
    }
    let raw = a
        .as_bytes()
        .iter()
        .zip(b.as_bytes())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum();
    Ok(HashDistance {
        raw,
        bits: a.bit_len() as u32,
    })
}

/// A normalized threshold kept as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Threshold {
    numerator: u32,
    denominator: u32,
}

impl Threshold {
    pub fn new(numerator: u32, denominator: u32) -> Result<Self, HashError> {
        if numerator == 0 || numerator >= denominator {
            return Err(HashError::InvalidThreshold(numerator, denominator));
        }
        Ok(Self {
            numerator,
            denominator,
        })
    }

    pub fn value(&self) -> f64 {
        f64::from(self.numerator) / f64::from(self.denominator)
    }

    /// `distance.normalized() < self`, compared exactly.
    pub fn admits(&self, distance: &HashDistance) -> bool {
        u64::from(distance.raw) * u64::from(self.denominator)
            < u64::from(self.numerator) * u64::from(distance.bits)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

/// Per-algorithm match thresholds `Δ_k`. Two digests match when their
/// normalized distance is strictly below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPolicy {
    pub ahash64: Threshold,
    pub pdq256: Threshold,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        Self {
            // PDQ's documented match radius is 31 bits.
            pdq256: Threshold {
                numerator: 31,
                denominator: 256,
            },
            ahash64: Threshold {
                numerator: 10,
                denominator: 64,
            },
        }
    }
}

impl MatchPolicy {
    pub fn threshold(&self, algorithm: Algorithm) -> Threshold {
        match algorithm {
            Algorithm::Ahash64 => self.ahash64,
            Algorithm::Pdq256 => self.pdq256,
        }
    }

    pub fn with_threshold(mut self, algorithm: Algorithm, threshold: Threshold) -> Self {
        match algorithm {
            Algorithm::Ahash64 => self.ahash64 = threshold,
            Algorithm::Pdq256 => self.pdq256 = threshold,
        }
        self
    }
}

pub fn is_match(
    a: &PerceptualHash,
    b: &PerceptualHash,
    policy: &MatchPolicy,
) -> Result<bool, HashError> {
    let d = hamming(a, b)?;
    Ok(policy.threshold(a.algorithm).admits(&d))
}

/// PDQ digest plus its 0..=100 quality score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PdqResult {
    pub hash: PerceptualHash,
    pub quality: u8,
}

/// Average hash: luma, 8x8 box resample, then bit `i` is set iff sample `i`
/// is at least the mean. The mean is compared as an exact fraction.
pub fn ahash(img: &ImageBuffer) -> PerceptualHash {
    let small = resize_box(&to_luminance(img), 8, 8).expect("8x8 is a valid target");
    let samples = small.data();
    let sum: u32 = samples.iter().map(|&v| u32::from(v)).sum();
    PerceptualHash::from_bits(
        Algorithm::Ahash64,
        samples.iter().map(|&v| 64 * u32::from(v) >= sum),
    )
}
