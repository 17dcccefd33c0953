//! Line-delimited JSON messages: one UTF-8 object per LF-terminated line,
//! binary values in standard base64.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::phash::Algorithm;

pub const PROTOCOL_VERSION: u32 = 1;
/// Longest accepted line, excluding the terminating LF.
pub const MAX_LINE_BYTES: usize = 1 << 20;
/// Most tokens carried by one `index_put` message.
pub const MAX_TOKENS_PER_CHUNK: usize = 1000;

pub mod codes {
    pub const BAD_REQUEST: u16 = 400;
    pub const NOT_FOUND: u16 = 404;
    pub const CONFLICT: u16 = 409;
    pub const TOO_LARGE: u16 = 413;
    pub const INTERNAL: u16 = 500;
    pub const UNAVAILABLE: u16 = 503;
    pub const TIMEOUT: u16 = 504;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("line exceeds {MAX_LINE_BYTES} bytes")]
    Oversize,
    #[error("unknown message type {0:?}")]
    UnknownType(String),
}

impl WireError {
    pub fn code(&self) -> u16 {
        match self {
            Self::Oversize => codes::TOO_LARGE,
            Self::Malformed(_) | Self::UnknownType(_) => codes::BAD_REQUEST,
        }
    }
}

/// Opaque bytes carried as a base64 string.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bytes(pub Vec<u8>);

impl std::fmt::Debug for Bytes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Bytes({})", B64.encode(&self.0))
    }
}

impl Serialize for Bytes {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Bytes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        B64.decode(s).map(Bytes).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Client,
    Provider,
}

/// A provider a client can obtain evaluations from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub provider_id: String,
    pub key_id: String,
}

/// Tokens a client computed under one provider's key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderTokens {
    pub provider_id: String,
    pub tokens: Vec<Bytes>,
}

fn is_empty(s: &str) -> bool {
    s.is_empty()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        #[serde(default, skip_serializing_if = "is_empty")]
        session: String,
        role: Role,
        proto: u32,
        algo: Algorithm,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        provider_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        key_id: Option<String>,
    },
    HelloAck {
        session: String,
        #[serde(default)]
        providers: Vec<ProviderInfo>,
    },
    IndexPut {
        #[serde(default, skip_serializing_if = "is_empty")]
        session: String,
        seq: u64,
        tokens: Vec<Bytes>,
        #[serde(default)]
        last: bool,
    },
    IndexAck {
        session: String,
        count: u64,
    },
    BlindEvalReq {
        #[serde(default, skip_serializing_if = "is_empty")]
        session: String,
        provider_id: String,
        req_id: u64,
        elements: Vec<Bytes>,
    },
    BlindEvalResp {
        #[serde(default, skip_serializing_if = "is_empty")]
        session: String,
        provider_id: String,
        req_id: u64,
        elements: Vec<Bytes>,
    },
    ReportTokens {
        #[serde(default, skip_serializing_if = "is_empty")]
        session: String,
        reports: Vec<ProviderTokens>,
    },
    /// Coordinator's answer to `report_tokens`. Never says what matched.
    ReportAck {
        session: String,
        providers_contacted: u32,
    },
    MatchNotify {
        session: String,
        provider_id: String,
        tokens: Vec<Bytes>,
    },
    Error {
        #[serde(default, skip_serializing_if = "is_empty")]
        session: String,
        code: u16,
        #[serde(default)]
        message: String,
        /// Set when the error answers a specific `blind_eval_req`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        req_id: Option<u64>,
    },
}

const KNOWN_TYPES: &[&str] = &[
    "hello",
    "hello_ack",
    "index_put",
    "index_ack",
    "blind_eval_req",
    "blind_eval_resp",
    "report_tokens",
    "report_ack",
    "match_notify",
    "error",
];

impl WireMessage {
    pub fn error(session: &str, code: u16, message: impl Into<String>) -> Self {
        Self::Error {
            session: session.to_owned(),
            code,
            message: message.into(),
            req_id: None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Self::Hello { .. } => "hello",
            Self::HelloAck { .. } => "hello_ack",
            Self::IndexPut { .. } => "index_put",
            Self::IndexAck { .. } => "index_ack",
            Self::BlindEvalReq { .. } => "blind_eval_req",
            Self::BlindEvalResp { .. } => "blind_eval_resp",
            Self::ReportTokens { .. } => "report_tokens",
            Self::ReportAck { .. } => "report_ack",
            Self::MatchNotify { .. } => "match_notify",
            Self::Error { .. } => "error",
        }
    }
}

/// Serializes `msg` as one LF-terminated line.
pub fn encode_message(msg: &WireMessage) -> Vec<u8> {
    let mut line = serde_json::to_vec(msg).expect("wire messages always serialize");
    line.push(b'\n');
    line
}

/// Parses one line (a trailing LF or CRLF is allowed). Unknown fields are
/// ignored; an unknown `type` is reported separately so the peer can answer 400.
pub fn decode_message(line: &[u8]) -> Result<WireMessage, WireError> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    if line.len() > MAX_LINE_BYTES {
        return Err(WireError::Oversize);
    }
    let value: serde_json::Value =
        serde_json::from_slice(line).map_err(|e| WireError::Malformed(e.to_string()))?;
    let ty = value
        .get("type")
        .ok_or_else(|| WireError::Malformed("missing type".into()))?
        .as_str()
        .ok_or_else(|| WireError::Malformed("type is not a string".into()))?;
    if !KNOWN_TYPES.contains(&ty) {
        return Err(WireError::UnknownType(ty.to_owned()));
    }
    serde_json::from_value(value).map_err(|e| WireError::Malformed(e.to_string()))
}
