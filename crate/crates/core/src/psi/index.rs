//! The provider's precomputed token index and its PHIX file format.
//!
//! ```text
//! "PHIX" | version u8 = 1 | algorithm u8 | token_len u8 = 32 | key_id [8]
//!        | count u64 LE | count * 32 sorted token bytes
//! ```

use super::{KeyId, PsiError, Token, TOKEN_LEN};
use crate::phash::Algorithm;

pub const PHIX_MAGIC: &[u8; 4] = b"PHIX";
pub const PHIX_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 8 + 8;

/// Sorted, deduplicated tokens under one provider key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenIndex {
    algorithm: Algorithm,
    key_id: KeyId,
    tokens: Vec<Token>,
}

impl TokenIndex {
    /// Sorts and deduplicates `tokens`.
    pub fn new(algorithm: Algorithm, key_id: KeyId, mut tokens: Vec<Token>) -> Self {
        tokens.sort_unstable();
        tokens.dedup();
        Self {
            algorithm,
            key_id,
            tokens,
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn contains(&self, token: &Token) -> bool {
        self.tokens.binary_search(token).is_ok()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.tokens.len() * TOKEN_LEN);
        out.extend_from_slice(PHIX_MAGIC);
        out.push(PHIX_VERSION);
        out.push(self.algorithm.code());
        out.push(TOKEN_LEN as u8);
        out.extend_from_slice(&self.key_id.0);
        out.extend_from_slice(&(self.tokens.len() as u64).to_le_bytes());
        for t in &self.tokens {
            out.extend_from_slice(&t.0);
        }
        out
    }

    /// Parses a PHIX file. Tokens must be strictly ascending and the file
    /// must end exactly after the last token.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PsiError> {
        let bad = |msg: &str| PsiError::BadIndex(msg.to_owned());
        if bytes.len() < HEADER_LEN {
            return Err(bad("truncated header"));
        }
        if &bytes[..4] != PHIX_MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes[4] != PHIX_VERSION {
            return Err(bad(&format!("unsupported version {}", bytes[4])));
        }
        let algorithm =
            Algorithm::from_code(bytes[5]).ok_or_else(|| bad(&format!("unknown algorithm {}", bytes[5])))?;
        if usize::from(bytes[6]) != TOKEN_LEN {
            return Err(bad(&format!("unsupported token length {}", bytes[6])));
        }
        let key_id = KeyId(bytes[7..15].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[15..23].try_into().unwrap());
        let body = &bytes[HEADER_LEN..];
        let expected = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(TOKEN_LEN))
            .ok_or_else(|| bad("count overflows"))?;
        if body.len() != expected {
            return Err(bad(&format!(
                "body is {} bytes, header promises {expected}",
                body.len()
            )));
        }
        let tokens: Vec<Token> = body
            .chunks_exact(TOKEN_LEN)
            .map(|c| Token(c.try_into().unwrap()))
            .collect();
        if tokens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("tokens not strictly ascending"));
        }
        Ok(Self {
            algorithm,
            key_id,
            tokens,
        })
    }
}
