//! The three deployment roles over TCP.
//!
//! * The **coordinator** hosts each provider's token index, relays the
//!   client's blinded evaluation requests to the owning provider, matches
//!   reported tokens, and notifies providers of matches.
//! * A **provider** holds its OPRF key and the token-to-hash reverse map; it
//!   uploads its index, answers evaluations, and logs matched hashes.
//! * A **client** hashes content locally and reports only OPRF tokens; raw
//!   hashes never leave it.
//!
//! Session state machines: client `Init -> Hello -> Evaluating -> Reporting
//! -> Done`; provider `Init -> Hello -> Serving`. A message that is not
//! valid in the current state gets a 409 error and ends the session.

use std::io;
use std::time::Duration;

use thiserror::Error;
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncRead, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::sync::mpsc;

use crate::psi::PsiError;

mod client;
mod coordinator;
mod provider;
pub mod wire;

pub use client::{client_report, client_report_on, ReportReceipt};
pub use coordinator::{coordinator_serve, Coordinator};
pub use provider::{append_matches, provider_agent, ProviderAgentConfig, ProviderEvent};
pub use wire::{decode_message, encode_message, WireError, WireMessage};

/// How long a peer waits for an expected reply.
pub const REPLY_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("connection failed: {0}")]
    ConnectionFailed(String),
    #[error("protocol error {code}: {message}")]
    Protocol { code: u16, message: String },
    #[error("unexpected message {0}")]
    Unexpected(&'static str),
    #[error("peer closed the connection")]
    Closed,
    #[error("timed out waiting for a reply")]
    Timeout,
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Psi(#[from] PsiError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ServiceError {
    /// Protocol error code, if the failure carried one.
    pub fn code(&self) -> Option<u16> {
        match self {
            Self::Protocol { code, .. } => Some(*code),
            Self::Wire(w) => Some(w.code()),
            _ => None,
        }
    }
}

/// One decoded line, or why it could not be decoded.
type Incoming = Result<WireMessage, WireError>;

/// Reads one LF-terminated line of at most [`wire::MAX_LINE_BYTES`] bytes.
/// An over-long line is consumed up to its terminator and reported as
/// `Oversize`. Returns `None` at end of stream.
async fn read_line_limited<R: AsyncBufRead + Unpin>(reader: &mut R) -> io::Result<Option<Incoming>> {
    let mut buf = Vec::new();
    let mut oversize = false;
    loop {
        let available = reader.fill_buf().await?;
        if available.is_empty() {
            if buf.is_empty() && !oversize {
                return Ok(None);
            }
            break;
        }
        let (chunk, done) = match available.iter().position(|&b| b == b'\n') {
            Some(pos) => (&available[..pos], Some(pos + 1)),
            None => (available, None),
        };
        if !oversize {
            if buf.len() + chunk.len() > wire::MAX_LINE_BYTES + 1 {
                oversize = true;
                buf = Vec::new();
            } else {
                buf.extend_from_slice(chunk);
            }
        }
        let used = done.unwrap_or(available.len());
        reader.consume(used);
        if done.is_some() {
            break;
        }
    }
    if oversize {
        return Ok(Some(Err(WireError::Oversize)));
    }
    Ok(Some(decode_message(&buf)))
}

/// Moves line reading onto its own task so sessions can `select!` on the
/// resulting channel without cancellation hazards.
fn spawn_reader<R: AsyncRead + Unpin + Send + 'static>(read: R) -> mpsc::Receiver<Incoming> {
    let (tx, rx) = mpsc::channel(64);
    tokio::spawn(async move {
        let mut reader = BufReader::new(read);
        loop {
            match read_line_limited(&mut reader).await {
                Ok(Some(item)) => {
                    let stop = matches!(item, Err(WireError::Oversize));
                    if tx.send(item).await.is_err() || stop {
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    log::debug!("read error: {e}");
                    break;
                }
            }
        }
    });
    rx
}

async fn send<W: AsyncWrite + Unpin>(writer: &mut W, msg: &WireMessage) -> io::Result<()> {
    writer.write_all(&encode_message(msg)).await?;
    writer.flush().await
}

/// Waits for the next message, turning `error` replies into [`ServiceError::Protocol`].
async fn expect_reply(rx: &mut mpsc::Receiver<Incoming>) -> Result<WireMessage, ServiceError> {
    match tokio::time::timeout(REPLY_TIMEOUT, rx.recv()).await {
        Err(_) => Err(ServiceError::Timeout),
        Ok(None) => Err(ServiceError::Closed),
        Ok(Some(Err(e))) => Err(e.into()),
        Ok(Some(Ok(WireMessage::Error { code, message, .. }))) => Err(ServiceError::Protocol { code, message }),
        Ok(Some(Ok(msg))) => Ok(msg),
    }
}
