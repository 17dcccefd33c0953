//! Outsourced unbalanced private set intersection over a blinded
//! exponentiation OPRF.
//!
//! The provider holds an OPRF key `k` and publishes (to the coordinator) the
//! sorted tokens `F_k(y) = H2(text(y) || H(text(y))^k)` for its whole set.
//! A client with a small set learns `F_k(x)` for each of its hashes by
//! sending `H(text(x))^r` and unblinding the provider's answer with `r^-1`,
//! then hands the tokens to the coordinator for matching. Client online cost
//! is two exponentiations and one inversion per item, independent of `|Y|`.
//!
//! Security model is semi-honest; nothing here defends against a malicious
//! provider returning wrong evaluations.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand_core::CryptoRngCore;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::phash::{Algorithm, PerceptualHash};

mod group;
mod index;
mod ristretto;
mod toy;

pub use group::{GroupOps, Instrumented};
pub use index::{TokenIndex, PHIX_MAGIC, PHIX_VERSION};
pub use ristretto::Ristretto255;
pub use toy::{ToyGroup, TOY_P, TOY_Q};

pub const TOKEN_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PsiError {
    #[error("blinding scalar is zero")]
    ZeroScalar,
    #[error("invalid or non-canonical group element")]
    InvalidElement,
    #[error("invalid scalar encoding")]
    InvalidScalar,
    #[error("mixed algorithms: expected {expected}, found {found}")]
    MixedAlgorithms { expected: Algorithm, found: Algorithm },
    #[error("client set is empty")]
    EmptySet,
    #[error("evaluation count mismatch: sent {sent}, received {received}")]
    CountMismatch { sent: usize, received: usize },
    #[error("bad token index: {0}")]
    BadIndex(String),
    #[error("bad token: {0}")]
    BadToken(String),
    #[error("bad reverse map line {line}: {reason}")]
    BadReverseMap { line: usize, reason: String },
}

/// An OPRF output: a 32-byte digest that stands in for a perceptual hash.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(pub [u8; TOKEN_LEN]);

impl Token {
    pub fn to_base64(&self) -> String {
        B64.encode(self.0)
    }

    pub fn from_base64(s: &str) -> Result<Self, PsiError> {
        let bytes = B64.decode(s).map_err(|e| PsiError::BadToken(e.to_string()))?;
        Self::from_slice(&bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, PsiError> {
        bytes
            .try_into()
            .map(Token)
            .map_err(|_| PsiError::BadToken(format!("expected {TOKEN_LEN} bytes, got {}", bytes.len())))
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Token({})", hex::encode(&self.0[..8]))
    }
}

/// Public 8-byte identifier of an OPRF key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId(pub [u8; 8]);

impl KeyId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        hex::decode(s).ok()?.try_into().ok().map(KeyId)
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({})", self.to_hex())
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A provider's OPRF key. The scalar never leaves the provider.
#[derive(Clone)]
pub struct OprfKey<G: GroupOps> {
    scalar: G::Scalar,
    id: KeyId,
}

impl<G: GroupOps> fmt::Debug for OprfKey<G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OprfKey").field("id", &self.id).finish_non_exhaustive()
    }
}

impl<G: GroupOps> OprfKey<G> {
    pub fn generate(group: &G, rng: &mut dyn CryptoRngCore) -> Self {
        let scalar = group.random_scalar(rng);
        Self::from_scalar(group, scalar).expect("random scalars are nonzero")
    }

    pub fn from_scalar(group: &G, scalar: G::Scalar) -> Result<Self, PsiError> {
        if group.is_zero(&scalar) {
            return Err(PsiError::ZeroScalar);
        }
        let digest = Sha256::new()
            .chain_update(b"phg-v1-key-id")
            .chain_update(group.encode_scalar(&scalar))
            .finalize();
        let id = KeyId(digest[..8].try_into().unwrap());
        Ok(Self { scalar, id })
    }

    /// Loads a key from its raw scalar encoding (the key-file format).
    pub fn from_bytes(group: &G, bytes: &[u8]) -> Result<Self, PsiError> {
        Self::from_scalar(group, group.decode_scalar(bytes)?)
    }

    pub fn to_bytes(&self, group: &G) -> Vec<u8> {
        group.encode_scalar(&self.scalar)
    }

    pub fn id(&self) -> KeyId {
        self.id
    }

    pub fn scalar(&self) -> &G::Scalar {
        &self.scalar
    }
}

fn oprf_input(h: &PerceptualHash) -> String {
    h.to_text()
}

/// `H(text(h))^r`.
pub fn blind<G: GroupOps>(group: &G, h: &PerceptualHash, r: &G::Scalar) -> Result<G::Element, PsiError> {
    if group.is_zero(r) {
        return Err(PsiError::ZeroScalar);
    }
    Ok(group.exp(&group.hash_to_group(oprf_input(h).as_bytes()), r))
}

/// Provider side: raises the blinded element to the key.
pub fn evaluate<G: GroupOps>(group: &G, blinded: &G::Element, key: &OprfKey<G>) -> G::Element {
    group.exp(blinded, &key.scalar)
}

/// [`evaluate`] on wire bytes; rejects non-canonical encodings.
pub fn evaluate_encoded<G: GroupOps>(group: &G, blinded: &[u8], key: &OprfKey<G>) -> Result<Vec<u8>, PsiError> {
    let e = group.decode(blinded)?;
    Ok(group.encode(&evaluate(group, &e, key)))
}

fn finalize<G: GroupOps>(group: &G, h: &PerceptualHash, unblinded: &G::Element) -> Token {
    let digest = Sha256::new()
        .chain_update(oprf_input(h).as_bytes())
        .chain_update(group.encode(unblinded))
        .finalize();
    Token(digest.into())
}

/// Client side: strips the blind and hashes into a token.
pub fn unblind_finalize<G: GroupOps>(
    group: &G,
    evaluated: &G::Element,
    r: &G::Scalar,
    h: &PerceptualHash,
) -> Result<Token, PsiError> {
    if group.is_zero(r) {
        return Err(PsiError::ZeroScalar);
    }
    let unblinded = group.exp(evaluated, &group.invert(r));
    Ok(finalize(group, h, &unblinded))
}

/// Provider side: the token of `h` computed directly with the key.
pub fn direct_token<G: GroupOps>(group: &G, h: &PerceptualHash, key: &OprfKey<G>) -> Token {
    let point = group.exp(&group.hash_to_group(oprf_input(h).as_bytes()), &key.scalar);
    finalize(group, h, &point)
}

fn check_algorithm(algorithm: Algorithm, hashes: &[PerceptualHash]) -> Result<(), PsiError> {
    match hashes.iter().find(|h| h.algorithm() != algorithm) {
        Some(h) => Err(PsiError::MixedAlgorithms {
            expected: algorithm,
            found: h.algorithm(),
        }),
        None => Ok(()),
    }
}

/// Token-to-hash map the provider keeps locally.
pub type ReverseMap = HashMap<Token, PerceptualHash>;

/// Offline precomputation of the provider's index plus its reverse map.
pub fn build_index_with_map<G: GroupOps>(
    group: &G,
    algorithm: Algorithm,
    set: &[PerceptualHash],
    key: &OprfKey<G>,
) -> Result<(TokenIndex, ReverseMap), PsiError> {
    check_algorithm(algorithm, set)?;
    let pairs: Vec<(Token, PerceptualHash)> = set
        .par_iter()
        .map(|h| (direct_token(group, h, key), *h))
        .collect();
    let index = TokenIndex::new(algorithm, key.id(), pairs.iter().map(|(t, _)| *t).collect());
    Ok((index, pairs.into_iter().collect()))
}

pub fn build_index<G: GroupOps>(
    group: &G,
    algorithm: Algorithm,
    set: &[PerceptualHash],
    key: &OprfKey<G>,
) -> Result<TokenIndex, PsiError> {
    build_index_with_map(group, algorithm, set, key).map(|(index, _)| index)
}

/// Client tokens found in the index, in client order with duplicates kept.
pub fn intersect(client_tokens: &[Token], index: &TokenIndex) -> Vec<Token> {
    client_tokens
        .iter()
        .filter(|t| index.contains(t))
        .copied()
        .collect()
}

/// The reporter's hashes together with one blinding scalar per item.
///
/// Blinds are single-use: call [`ClientSet::reblind`] before talking to
/// another provider so evaluations cannot be linked across sessions.
#[derive(Debug, Clone)]
pub struct ClientSet<G: GroupOps> {
    items: Vec<PerceptualHash>,
    blinds: Vec<G::Scalar>,
}

impl<G: GroupOps> ClientSet<G> {
    pub fn new(group: &G, items: Vec<PerceptualHash>, rng: &mut dyn CryptoRngCore) -> Result<Self, PsiError> {
        let first = items.first().ok_or(PsiError::EmptySet)?;
        check_algorithm(first.algorithm(), &items)?;
        let blinds = items.iter().map(|_| group.random_scalar(rng)).collect();
        Ok(Self { items, blinds })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.items[0].algorithm()
    }

    pub fn items(&self) -> &[PerceptualHash] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn reblind(&mut self, group: &G, rng: &mut dyn CryptoRngCore) {
        for r in &mut self.blinds {
            *r = group.random_scalar(rng);
        }
    }

    /// One blinded element per item.
    pub fn blinded(&self, group: &G) -> Result<Vec<G::Element>, PsiError> {
        self.items
            .iter()
            .zip(&self.blinds)
            .map(|(h, r)| blind(group, h, r))
            .collect()
    }

    /// Turns the provider's evaluations (same order) into tokens.
    pub fn finalize(&self, group: &G, evaluated: &[G::Element]) -> Result<Vec<Token>, PsiError> {
        if evaluated.len() != self.items.len() {
            return Err(PsiError::CountMismatch {
                sent: self.items.len(),
                received: evaluated.len(),
            });
        }
        self.items
            .iter()
            .zip(&self.blinds)
            .zip(evaluated)
            .map(|((h, r), e)| unblind_finalize(group, e, r, h))
            .collect()
    }
}

/// What each party ends up with after a local run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsiOutcome {
    /// Hashes the provider learns: `X ∩ Y`, in client order.
    pub provider_output: Vec<PerceptualHash>,
    /// The only thing the provider learns beyond the intersection.
    pub client_set_size: usize,
}

/// Runs the whole protocol in-process: index build, blind, evaluate,
/// unblind, intersect, and the provider's reverse lookup.
pub fn run_psi_local<G: GroupOps>(
    group: &G,
    client: &ClientSet<G>,
    provider_set: &[PerceptualHash],
    key: &OprfKey<G>,
) -> Result<PsiOutcome, PsiError> {
    let (index, reverse) = build_index_with_map(group, client.algorithm(), provider_set, key)?;
    let blinded = client.blinded(group)?;
    let evaluated: Vec<G::Element> = blinded.iter().map(|b| evaluate(group, b, key)).collect();
    let tokens = client.finalize(group, &evaluated)?;
    let matched = intersect(&tokens, &index);
    Ok(PsiOutcome {
        provider_output: matched.iter().map(|t| reverse[t]).collect(),
        client_set_size: client.len(),
    })
}

/// Writes the reverse map as `token_b64<TAB>hash_text` lines, sorted by token.
pub fn write_reverse_map<W: Write>(out: &mut W, map: &ReverseMap) -> std::io::Result<()> {
    let mut entries: Vec<_> = map.iter().collect();
    entries.sort_unstable_by_key(|(t, _)| **t);
    for (token, hash) in entries {
        writeln!(out, "{}\t{}", token.to_base64(), hash)?;
    }
    Ok(())
}

pub fn read_reverse_map<R: BufRead>(input: R) -> Result<ReverseMap, PsiError> {
    let mut map = ReverseMap::new();
    for (n, line) in input.lines().enumerate() {
        let err = |reason: String| PsiError::BadReverseMap { line: n + 1, reason };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let (tok, hash) = line.split_once('\t').ok_or_else(|| err("missing tab".into()))?;
        let token = Token::from_base64(tok).map_err(|e| err(e.to_string()))?;
        let hash = hash.parse().map_err(|e: crate::phash::HashError| err(e.to_string()))?;
        map.insert(token, hash);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_hash(rng: &mut impl Rng, algorithm: Algorithm) -> PerceptualHash {
        let bytes: Vec<u8> = (0..algorithm.byte_len()).map(|_| rng.gen()).collect();
        PerceptualHash::from_bytes(algorithm, &bytes).unwrap()
    }

    #[test]
    fn zero_scalar_rejected() {
        let g = ToyGroup;
        let h = PerceptualHash::zero(Algorithm::Ahash64);
        assert_eq!(blind(&g, &h, &0), Err(PsiError::ZeroScalar));
        assert_eq!(unblind_finalize(&g, &1, &0, &h), Err(PsiError::ZeroScalar));
        assert!(OprfKey::from_scalar(&g, 0).is_err());
    }

    #[test]
    fn blind_unblind_identity_toy() {
        let g = ToyGroup;
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..100 {
            let h = random_hash(&mut rng, Algorithm::Pdq256);
            let r = g.random_scalar(&mut rng);
            let b = blind(&g, &h, &r).unwrap();
            assert_eq!(g.exp(&b, &g.invert(&r)), g.hash_to_group(h.to_text().as_bytes()));
        }
    }

    #[test]
    fn evaluate_identity_is_identity() {
        let g = Ristretto255;
        let key = OprfKey::generate(&g, &mut rand::rngs::OsRng);
        assert_eq!(evaluate(&g, &g.identity(), &key), g.identity());
        let ident = g.encode(&g.identity());
        assert_eq!(evaluate_encoded(&g, &ident, &key).unwrap(), ident);
        assert_eq!(evaluate_encoded(&g, &[0xff; 32], &key), Err(PsiError::InvalidElement));
    }

    #[test]
    fn sessions_agree_on_tokens() {
        let g = Ristretto255;
        let mut rng = StdRng::seed_from_u64(2);
        let key = OprfKey::generate(&g, &mut rng);
        let h = random_hash(&mut rng, Algorithm::Pdq256);
        let mut set = ClientSet::new(&g, vec![h], &mut rng).unwrap();
        let run = |set: &ClientSet<Ristretto255>| {
            let b = set.blinded(&g).unwrap();
            let e: Vec<_> = b.iter().map(|x| evaluate(&g, x, &key)).collect();
            (b, set.finalize(&g, &e).unwrap())
        };
        let (b1, t1) = run(&set);
        set.reblind(&g, &mut rng);
        let (b2, t2) = run(&set);
        assert_ne!(b1, b2);
        assert_eq!(t1, t2);
        assert_eq!(t1[0], direct_token(&g, &h, &key));
    }

    #[test]
    fn tokens_differ_across_algorithms_with_equal_bits() {
        let g = ToyGroup;
        let key = OprfKey::from_scalar(&g, 77).unwrap();
        let a = PerceptualHash::zero(Algorithm::Ahash64);
        let p = PerceptualHash::zero(Algorithm::Pdq256);
        assert_ne!(direct_token(&g, &a, &key), direct_token(&g, &p, &key));
    }

    #[test]
    fn build_index_edge_cases() {
        let g = ToyGroup;
        let key = OprfKey::from_scalar(&g, 5).unwrap();
        let idx = build_index(&g, Algorithm::Pdq256, &[], &key).unwrap();
        assert_eq!(idx.len(), 0);
        let h = PerceptualHash::zero(Algorithm::Pdq256);
        let idx = build_index(&g, Algorithm::Pdq256, &[h, h], &key).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.key_id(), key.id());
        let err = build_index(&g, Algorithm::Pdq256, &[h, PerceptualHash::zero(Algorithm::Ahash64)], &key);
        assert!(matches!(err, Err(PsiError::MixedAlgorithms { .. })));
    }

    #[test]
    fn client_set_validation() {
        let g = ToyGroup;
        let mut rng = StdRng::seed_from_u64(3);
        assert_eq!(ClientSet::<ToyGroup>::new(&g, vec![], &mut rng).unwrap_err(), PsiError::EmptySet);
        let mixed = vec![PerceptualHash::zero(Algorithm::Pdq256), PerceptualHash::zero(Algorithm::Ahash64)];
        assert!(ClientSet::new(&g, mixed, &mut rng).is_err());
        let set = ClientSet::new(&g, vec![PerceptualHash::zero(Algorithm::Pdq256)], &mut rng).unwrap();
        assert!(matches!(set.finalize(&g, &[]), Err(PsiError::CountMismatch { .. })));
    }

    #[test]
    fn local_run_examples() {
        let g = ToyGroup;
        let mut rng = StdRng::seed_from_u64(4);
        let key = OprfKey::generate(&g, &mut rng);
        let h = random_hash(&mut rng, Algorithm::Ahash64);
        let set = ClientSet::new(&g, vec![h], &mut rng).unwrap();
        let out = run_psi_local(&g, &set, &[h], &key).unwrap();
        assert_eq!(out.provider_output, vec![h]);
        let other = random_hash(&mut rng, Algorithm::Ahash64);
        let out = run_psi_local(&g, &set, &[other], &key).unwrap();
        assert!(out.provider_output.is_empty());
        assert_eq!(out.client_set_size, 1);
    }

    #[test]
    fn intersect_keeps_client_order_and_duplicates() {
        let g = ToyGroup;
        let key = OprfKey::from_scalar(&g, 11).unwrap();
        let hs: Vec<_> = (0u8..4)
            .map(|i| PerceptualHash::from_bytes(Algorithm::Ahash64, &[i; 8]).unwrap())
            .collect();
        let idx = build_index(&g, Algorithm::Ahash64, &hs[..2], &key).unwrap();
        let t: Vec<_> = hs.iter().map(|h| direct_token(&g, h, &key)).collect();
        let client = vec![t[3], t[1], t[0], t[1]];
        assert_eq!(intersect(&client, &idx), vec![t[1], t[0], t[1]]);
        assert!(intersect(&[t[2], t[3]], &idx).is_empty());
    }

    #[test]
    fn reverse_map_roundtrip() {
        let g = ToyGroup;
        let key = OprfKey::from_scalar(&g, 9).unwrap();
        let hs: Vec<_> = (0u8..5)
            .map(|i| PerceptualHash::from_bytes(Algorithm::Pdq256, &[i; 32]).unwrap())
            .collect();
        let (_, map) = build_index_with_map(&g, Algorithm::Pdq256, &hs, &key).unwrap();
        let mut buf = Vec::new();
        write_reverse_map(&mut buf, &map).unwrap();
        assert_eq!(read_reverse_map(&buf[..]).unwrap(), map);
        assert!(read_reverse_map(&b"nonsense\n"[..]).is_err());
    }

    #[test]
    fn key_file_roundtrip() {
        let g = Ristretto255;
        let key = OprfKey::generate(&g, &mut rand::rngs::OsRng);
        let bytes = key.to_bytes(&g);
        assert_eq!(bytes.len(), 32);
        let back = OprfKey::from_bytes(&g, &bytes).unwrap();
        assert_eq!(back.id(), key.id());
        assert_eq!(back.scalar(), key.scalar());
        assert!(OprfKey::from_bytes(&g, &[0u8; 32]).is_err());
    }
}
