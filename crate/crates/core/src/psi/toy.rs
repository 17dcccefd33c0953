//! A deliberately tiny Schnorr group for exhaustive tests. Not secure.

use rand::Rng;
use rand_core::CryptoRngCore;
use sha2::{Digest, Sha256};

use super::group::GroupOps;
use super::PsiError;

/// Safe prime `p = 2q + 1`.
pub const TOY_P: u64 = 4_294_967_087;
/// Prime order of the quadratic-residue subgroup.
pub const TOY_Q: u64 = 2_147_483_543;

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((u128::from(a) * u128::from(b)) % u128::from(m)) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Quadratic residues mod [`TOY_P`], order [`TOY_Q`] (~2^31). Elements and
/// scalars encode as 8 big-endian bytes.
#[derive(Debug, Default, Clone, Copy)]
pub struct ToyGroup;

impl GroupOps for ToyGroup {
    type Element = u64;
    type Scalar = u64;

    const ELEMENT_LEN: usize = 8;
    const SCALAR_LEN: usize = 8;

    fn identity(&self) -> u64 {
        1
    }

    fn hash_to_group(&self, msg: &[u8]) -> u64 {
        let digest = Sha256::new()
            .chain_update(b"phg-v1-toy-h2g")
            .chain_update(msg)
            .finalize();
        let x = u64::from_be_bytes(digest[..8].try_into().unwrap()) % (TOY_P - 1) + 1;
        mul_mod(x, x, TOY_P)
    }

    fn random_scalar(&self, rng: &mut dyn CryptoRngCore) -> u64 {
        rng.gen_range(1..TOY_Q)
    }

    fn is_zero(&self, s: &u64) -> bool {
        s.is_multiple_of(TOY_Q)
    }

    fn invert(&self, s: &u64) -> u64 {
        pow_mod(*s, TOY_Q - 2, TOY_Q)
    }

    fn exp(&self, e: &u64, s: &u64) -> u64 {
        pow_mod(*e, *s, TOY_P)
    }

    fn encode(&self, e: &u64) -> Vec<u8> {
        e.to_be_bytes().to_vec()
    }

    fn decode(&self, bytes: &[u8]) -> Result<u64, PsiError> {
        let arr: [u8; 8] = bytes.try_into().map_err(|_| PsiError::InvalidElement)?;
        let x = u64::from_be_bytes(arr);
        if x == 0 || x >= TOY_P || pow_mod(x, TOY_Q, TOY_P) != 1 {
            return Err(PsiError::InvalidElement);
        }
        Ok(x)
    }

    fn encode_scalar(&self, s: &u64) -> Vec<u8> {
        s.to_be_bytes().to_vec()
    }

    fn decode_scalar(&self, bytes: &[u8]) -> Result<u64, PsiError> {
        let arr: [u8; 8] = bytes.try_into().map_err(|_| PsiError::InvalidScalar)?;
        let s = u64::from_be_bytes(arr);
        if s >= TOY_Q {
            return Err(PsiError::InvalidScalar);
        }
        Ok(s)
    }
}
