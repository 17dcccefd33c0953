//! Perceptual image hashing and private hash matching.
//!
//! The crate is split along the life of a hash:
//!
//! * [`imaging`] decodes PGM/PPM/PNG input and provides the deterministic
//!   preprocessing (luminance, box resampling, mild edits) the hashes rely on.
//! * [`phash`] computes aHash-64 and PDQ-256 digests and compares them with
//!   the normalized Hamming distance.
//! * [`hashcodec`] renders digests as square pixel grids and back.
//! * [`evalharness`] aggregates perceptual similarity over labelled image
//!   pairs and reports robustness / distinctness statistics.
//! * [`psi`] is the OPRF-based private set intersection core: reporters learn
//!   keyed tokens for their hashes without revealing them, and providers
//!   learn only the hashes that are in their own set.
//! * [`service`] runs the three protocol roles (client, coordinator,
//!   provider) over line-delimited JSON on TCP.
//! * [`cli`] backs the `phg` binary.

pub mod cli;
pub mod evalharness;
pub mod hashcodec;
pub mod imaging;
pub mod phash;
pub mod psi;
pub mod service;

pub use hashcodec::{PixelGrid, PixelGridMode};
pub use imaging::{ImageBuffer, ImageFormat, TransformSpec};
pub use phash::{Algorithm, HashDistance, MatchPolicy, PdqResult, PerceptualHash};
