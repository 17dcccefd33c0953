use std::fs::OpenOptions;
use std::future::Future;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{SecondsFormat, Utc};
use tokio::net::TcpStream;
use tokio::sync::mpsc;

use super::wire::{codes, Bytes, Role, WireMessage, MAX_TOKENS_PER_CHUNK, PROTOCOL_VERSION};
use super::{expect_reply, send, spawn_reader, ServiceError};
use crate::phash::PerceptualHash;
use crate::psi::{evaluate_encoded, OprfKey, ReverseMap, Ristretto255, Token, TokenIndex};

#[derive(Debug, Clone)]
pub struct ProviderAgentConfig {
    pub provider_id: String,
    pub key: OprfKey<Ristretto255>,
    pub index: Arc<TokenIndex>,
    pub reverse_map: Arc<ReverseMap>,
    pub match_log: PathBuf,
    pub reconnect_delay: Duration,
}

/// Progress reports for callers that want to observe the agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderEvent {
    Connected,
    IndexUploaded { count: u64 },
    Matched(Vec<PerceptualHash>),
    Disconnected(String),
}

/// Appends `hash_text<TAB>timestamp` lines to the match log.
pub fn append_matches(path: &Path, hashes: &[PerceptualHash]) -> io::Result<()> {
    if hashes.is_empty() {
        return Ok(());
    }
    let now = Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true);
    let mut out = String::new();
    for h in hashes {
        out.push_str(&format!("{h}\t{now}\n"));
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(out.as_bytes())?;
    file.sync_data()
}

/// Maps notified tokens back to hashes, warning about unknown ones.
fn resolve(map: &ReverseMap, tokens: &[Bytes]) -> Vec<PerceptualHash> {
    let mut hashes = Vec::with_capacity(tokens.len());
    for b in tokens {
        match Token::from_slice(&b.0).ok().and_then(|t| map.get(&t)) {
            Some(h) => hashes.push(*h),
            None => log::warn!("match_notify carried a token not in the reverse map"),
        }
    }
    hashes
}

fn emit(events: &Option<mpsc::UnboundedSender<ProviderEvent>>, event: ProviderEvent) {
    if let Some(tx) = events {
        let _ = tx.send(event);
    }
}

/// Keeps a provider session with the coordinator at `addr` alive until
/// `shutdown` resolves, re-uploading the full index on every connect.
pub async fn provider_agent(
    addr: &str,
    config: ProviderAgentConfig,
    events: Option<mpsc::UnboundedSender<ProviderEvent>>,
    shutdown: impl Future<Output = ()>,
) -> Result<(), ServiceError> {
    if config.key.id() != config.index.key_id() {
        return Err(ServiceError::Io(io::Error::new(
            io::ErrorKind::InvalidInput,
            "index was built with a different key",
        )));
    }
    tokio::pin!(shutdown);
    loop {
        let reason = tokio::select! {
            _ = &mut shutdown => return Ok(()),
            r = run_session(addr, &config, &events) => match r {
                Ok(()) => "coordinator closed the session".to_owned(),
                Err(e) => e.to_string(),
            },
        };
        log::warn!("provider {}: {reason}; reconnecting", config.provider_id);
        emit(&events, ProviderEvent::Disconnected(reason));
        tokio::select! {
            _ = &mut shutdown => return Ok(()),
            _ = tokio::time::sleep(config.reconnect_delay) => {}
        }
    }
}

async fn run_session(
    addr: &str,
    config: &ProviderAgentConfig,
    events: &Option<mpsc::UnboundedSender<ProviderEvent>>,
) -> Result<(), ServiceError> {
    let stream = TcpStream::connect(addr)
        .await
        .map_err(|e| ServiceError::ConnectionFailed(format!("{addr}: {e}")))?;
    stream.set_nodelay(true)?;
    let (read, mut write) = stream.into_split();
    let mut rx = spawn_reader(read);
    let index = &config.index;
    let hello = WireMessage::Hello {
        session: String::new(),
        role: Role::Provider,
        proto: PROTOCOL_VERSION,
        algo: index.algorithm(),
        provider_id: Some(config.provider_id.clone()),
        key_id: Some(config.key.id().to_hex()),
    };
    send(&mut write, &hello).await?;
    let session = match expect_reply(&mut rx).await? {
        WireMessage::HelloAck { session, .. } => session,
        other => return Err(ServiceError::Unexpected(other.type_name())),
    };
    emit(events, ProviderEvent::Connected);

    let chunks: Vec<&[Token]> = if index.is_empty() {
        vec![&[]]
    } else {
        index.tokens().chunks(MAX_TOKENS_PER_CHUNK).collect()
    };
    let n = chunks.len();
    for (seq, chunk) in chunks.into_iter().enumerate() {
        let msg = WireMessage::IndexPut {
            session: session.clone(),
            seq: seq as u64,
            tokens: chunk.iter().map(|t| Bytes(t.0.to_vec())).collect(),
            last: seq + 1 == n,
        };
        send(&mut write, &msg).await?;
    }

    let group = Ristretto255;
    while let Some(item) = rx.recv().await {
        match item? {
            WireMessage::IndexAck { count, .. } => {
                log::info!("provider {}: index of {count} tokens active", config.provider_id);
                emit(events, ProviderEvent::IndexUploaded { count });
            }
            WireMessage::BlindEvalReq {
                provider_id,
                req_id,
                elements,
                ..
            } => {
                let evaluated: Result<Vec<Bytes>, _> = elements
                    .iter()
                    .map(|e| evaluate_encoded(&group, &e.0, &config.key).map(Bytes))
                    .collect();
                let reply = match evaluated {
                    Ok(elements) => WireMessage::BlindEvalResp {
                        session: session.clone(),
                        provider_id,
                        req_id,
                        elements,
                    },
                    Err(e) => WireMessage::Error {
                        session: session.clone(),
                        code: codes::BAD_REQUEST,
                        message: e.to_string(),
                        req_id: Some(req_id),
                    },
                };
                send(&mut write, &reply).await?;
            }
            WireMessage::MatchNotify { tokens, .. } => {
                let hashes = resolve(&config.reverse_map, &tokens);
                append_matches(&config.match_log, &hashes)?;
                emit(events, ProviderEvent::Matched(hashes));
            }
            WireMessage::Error { code, message, .. } => {
                return Err(ServiceError::Protocol { code, message });
            }
            other => {
                let msg = format!("{} not valid while serving", other.type_name());
                send(&mut write, &WireMessage::error(&session, codes::CONFLICT, msg)).await?;
                return Err(ServiceError::Unexpected(other.type_name()));
            }
        }
    }
    Ok(())
}
