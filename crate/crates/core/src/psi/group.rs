use std::fmt::Debug;
use std::sync::atomic::{AtomicU64, Ordering};

use rand_core::CryptoRngCore;

use super::PsiError;

/// A prime-order cyclic group with the operations the OPRF needs.
///
/// Implementations must encode canonically: every element has exactly one
/// encoding and `decode` rejects anything else.
pub trait GroupOps: Send + Sync {
    type Element: Clone + PartialEq + Debug + Send + Sync;
    type Scalar: Clone + PartialEq + Debug + Send + Sync;

    /// Length of an encoded element.
    const ELEMENT_LEN: usize;
    /// Length of an encoded scalar.
    const SCALAR_LEN: usize;

    fn identity(&self) -> Self::Element;
    fn hash_to_group(&self, msg: &[u8]) -> Self::Element;
    /// Uniform nonzero scalar.
    fn random_scalar(&self, rng: &mut dyn CryptoRngCore) -> Self::Scalar;
    fn is_zero(&self, s: &Self::Scalar) -> bool;
    /// Multiplicative inverse; `s` must be nonzero.
    fn invert(&self, s: &Self::Scalar) -> Self::Scalar;
    fn exp(&self, e: &Self::Element, s: &Self::Scalar) -> Self::Element;
    fn encode(&self, e: &Self::Element) -> Vec<u8>;
    fn decode(&self, bytes: &[u8]) -> Result<Self::Element, PsiError>;
    fn encode_scalar(&self, s: &Self::Scalar) -> Vec<u8>;
    fn decode_scalar(&self, bytes: &[u8]) -> Result<Self::Scalar, PsiError>;
}

/// Wraps a group and counts exponentiations and inversions.
#[derive(Debug, Default)]
pub struct Instrumented<G> {
    inner: G,
    exps: AtomicU64,
    inversions: AtomicU64,
}

impl<G> Instrumented<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            exps: AtomicU64::new(0),
            inversions: AtomicU64::new(0),
        }
    }

    pub fn exponentiations(&self) -> u64 {
        self.exps.load(Ordering::Relaxed)
    }

    pub fn inversions(&self) -> u64 {
        self.inversions.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.exps.store(0, Ordering::Relaxed);
        self.inversions.store(0, Ordering::Relaxed);
    }
}

impl<G: GroupOps> GroupOps for Instrumented<G> {
    type Element = G::Element;
    type Scalar = G::Scalar;

    const ELEMENT_LEN: usize = G::ELEMENT_LEN;
    const SCALAR_LEN: usize = G::SCALAR_LEN;

    fn identity(&self) -> Self::Element {
        self.inner.identity()
    }

    fn hash_to_group(&self, msg: &[u8]) -> Self::Element {
        self.inner.hash_to_group(msg)
    }

    fn random_scalar(&self, rng: &mut dyn CryptoRngCore) -> Self::Scalar {
        self.inner.random_scalar(rng)
    }

    fn is_zero(&self, s: &Self::Scalar) -> bool {
        self.inner.is_zero(s)
    }

    fn invert(&self, s: &Self::Scalar) -> Self::Scalar {
        self.inversions.fetch_add(1, Ordering::Relaxed);
        self.inner.invert(s)
    }

    fn exp(&self, e: &Self::Element, s: &Self::Scalar) -> Self::Element {
        self.exps.fetch_add(1, Ordering::Relaxed);
        self.inner.exp(e, s)
    }

    fn encode(&self, e: &Self::Element) -> Vec<u8> {
        self.inner.encode(e)
    }

    fn decode(&self, bytes: &[u8]) -> Result<Self::Element, PsiError> {
        self.inner.decode(bytes)
    }

    fn encode_scalar(&self, s: &Self::Scalar) -> Vec<u8> {
        self.inner.encode_scalar(s)
    }

    fn decode_scalar(&self, bytes: &[u8]) -> Result<Self::Scalar, PsiError> {
        self.inner.decode_scalar(bytes)
    }
}
