use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::Identity;
use rand_core::CryptoRngCore;
use sha2::{Digest, Sha512};

use super::group::GroupOps;
use super::PsiError;

const HASH_TO_GROUP_DST: &[u8] = b"phg-v1-ristretto255-h2g";

/// The ristretto255 prime-order group (32-byte canonical encodings).
#[derive(Debug, Default, Clone, Copy)]
pub struct Ristretto255;

impl GroupOps for Ristretto255 {
    type Element = RistrettoPoint;
    type Scalar = Scalar;

    const ELEMENT_LEN: usize = 32;
    const SCALAR_LEN: usize = 32;

    fn identity(&self) -> RistrettoPoint {
        RistrettoPoint::identity()
    }

    fn hash_to_group(&self, msg: &[u8]) -> RistrettoPoint {
        let digest = Sha512::new()
            .chain_update(HASH_TO_GROUP_DST)
            .chain_update((msg.len() as u64).to_be_bytes())
            .chain_update(msg)
            .finalize();
        RistrettoPoint::from_uniform_bytes(&digest.into())
    }

    fn random_scalar(&self, rng: &mut dyn CryptoRngCore) -> Scalar {
        loop {
            let s = Scalar::random(rng);
            if s != Scalar::ZERO {
                return s;
            }
        }
    }

    fn is_zero(&self, s: &Scalar) -> bool {
        *s == Scalar::ZERO
    }

    fn invert(&self, s: &Scalar) -> Scalar {
        s.invert()
    }

    fn exp(&self, e: &RistrettoPoint, s: &Scalar) -> RistrettoPoint {
        e * s
    }

    fn encode(&self, e: &RistrettoPoint) -> Vec<u8> {
        e.compress().to_bytes().to_vec()
    }

    fn decode(&self, bytes: &[u8]) -> Result<RistrettoPoint, PsiError> {
        CompressedRistretto::from_slice(bytes)
            .ok()
            .and_then(|c| c.decompress())
            .ok_or(PsiError::InvalidElement)
    }

    fn encode_scalar(&self, s: &Scalar) -> Vec<u8> {
        s.to_bytes().to_vec()
    }

    fn decode_scalar(&self, bytes: &[u8]) -> Result<Scalar, PsiError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| PsiError::InvalidScalar)?;
        Option::<Scalar>::from(Scalar::from_canonical_bytes(arr)).ok_or(PsiError::InvalidScalar)
    }
}
