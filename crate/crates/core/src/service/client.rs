use rand_core::CryptoRngCore;
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpStream;

use super::wire::{Bytes, ProviderTokens, Role, WireMessage, MAX_TOKENS_PER_CHUNK, PROTOCOL_VERSION};
use super::{expect_reply, send, spawn_reader, ServiceError};
use crate::phash::PerceptualHash;
use crate::psi::{ClientSet, GroupOps, PsiError, Ristretto255};

/// What a reporter learns from a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportReceipt {
    pub providers_contacted: u32,
    /// Size of the reported set.
    pub tokens_sent: usize,
}

/// Connects to `addr` and reports `hashes` to every provider registered there.
pub async fn client_report(addr: &str, hashes: &[PerceptualHash]) -> Result<ReportReceipt, ServiceError> {
    let stream = TcpStream::connect(addr)
        .await
        .map_err(|e| ServiceError::ConnectionFailed(format!("{addr}: {e}")))?;
    stream.set_nodelay(true)?;
    let mut rng = rand::rngs::OsRng;
    let mut set = ClientSet::new(&Ristretto255, hashes.to_vec(), &mut rng)?;
    client_report_on(stream, &mut set, &mut rng).await
}

/// Runs one client session over an established stream. The set is
/// reblinded for every provider.
pub async fn client_report_on<S>(
    stream: S,
    set: &mut ClientSet<Ristretto255>,
    rng: &mut (dyn CryptoRngCore + Send),
) -> Result<ReportReceipt, ServiceError>
where
    S: AsyncRead + AsyncWrite + Send + 'static,
{
    let group = Ristretto255;
    let (read, mut write) = tokio::io::split(stream);
    let mut rx = spawn_reader(read);
    let hello = WireMessage::Hello {
        session: String::new(),
        role: Role::Client,
        proto: PROTOCOL_VERSION,
        algo: set.algorithm(),
        provider_id: None,
        key_id: None,
    };
    send(&mut write, &hello).await?;
    let (session, providers) = match expect_reply(&mut rx).await? {
        WireMessage::HelloAck { session, providers } => (session, providers),
        other => return Err(ServiceError::Unexpected(other.type_name())),
    };

    let mut reports = Vec::with_capacity(providers.len());
    let mut req_id = 0u64;
    for provider in providers {
        set.reblind(&group, rng);
        let blinded = set.blinded(&group)?;
        let mut evaluated = Vec::with_capacity(blinded.len());
        for chunk in blinded.chunks(MAX_TOKENS_PER_CHUNK) {
            let req = WireMessage::BlindEvalReq {
                session: session.clone(),
                provider_id: provider.provider_id.clone(),
                req_id,
                elements: chunk.iter().map(|e| Bytes(group.encode(e))).collect(),
            };
            send(&mut write, &req).await?;
            match expect_reply(&mut rx).await? {
                WireMessage::BlindEvalResp { req_id: r, elements, .. } if r == req_id => {
                    if elements.len() != chunk.len() {
                        return Err(PsiError::CountMismatch {
                            sent: chunk.len(),
                            received: elements.len(),
                        }
                        .into());
                    }
                    for e in elements {
                        evaluated.push(group.decode(&e.0)?);
                    }
                }
                other => return Err(ServiceError::Unexpected(other.type_name())),
            }
            req_id += 1;
        }
        let tokens = set.finalize(&group, &evaluated)?;
        reports.push(ProviderTokens {
            provider_id: provider.provider_id,
            tokens: tokens.iter().map(|t| Bytes(t.0.to_vec())).collect(),
        });
    }

    send(&mut write, &WireMessage::ReportTokens { session, reports }).await?;
    match expect_reply(&mut rx).await? {
        WireMessage::ReportAck {
            providers_contacted, ..
        } => Ok(ReportReceipt {
            providers_contacted,
            tokens_sent: set.len(),
        }),
        other => Err(ServiceError::Unexpected(other.type_name())),
    }
}
