use std::collections::HashMap;
use std::future::Future;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use tokio::io::AsyncWrite;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};

use super::wire::{codes, Bytes, ProviderInfo, ProviderTokens, Role, WireMessage, MAX_TOKENS_PER_CHUNK, PROTOCOL_VERSION};
use super::{send, spawn_reader, Incoming, REPLY_TIMEOUT};
use crate::phash::Algorithm;
use crate::psi::{intersect, KeyId, Token, TokenIndex};

type EvalReply = oneshot::Sender<Result<Vec<Bytes>, (u16, String)>>;

enum ProviderCommand {
    Evaluate { elements: Vec<Bytes>, reply: EvalReply },
    Notify { tokens: Vec<Bytes> },
}

#[derive(Clone)]
struct ProviderHandle {
    conn: u64,
    algorithm: Algorithm,
    key_id: KeyId,
    tx: mpsc::Sender<ProviderCommand>,
}

struct State {
    data_dir: Option<PathBuf>,
    /// Active index per provider. Swapped whole, never mutated.
    indexes: RwLock<HashMap<String, Arc<TokenIndex>>>,
    /// Currently connected provider sessions.
    providers: Mutex<HashMap<String, ProviderHandle>>,
    next_conn: AtomicU64,
}

/// Shared coordinator state; cheap to clone.
#[derive(Clone)]
pub struct Coordinator {
    state: Arc<State>,
}

/// Provider ids double as file names, so keep them boring.
fn valid_provider_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Coordinator {
    /// In-memory coordinator without persistence.
    pub fn in_memory() -> Self {
        Self::with_indexes(None, HashMap::new())
    }

    /// Opens `data_dir`, loading every `<provider_id>.phix` found there.
    pub fn open(data_dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(data_dir)?;
        let mut indexes = HashMap::new();
        for entry in std::fs::read_dir(data_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("phix") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).filter(|s| valid_provider_id(s)) else {
                continue;
            };
            let bytes = std::fs::read(&path)?;
            match TokenIndex::from_bytes(&bytes) {
                Ok(index) => {
                    log::info!("loaded index for {id}: {} tokens", index.len());
                    indexes.insert(id.to_owned(), Arc::new(index));
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(Self::with_indexes(Some(data_dir.to_owned()), indexes))
    }

    fn with_indexes(data_dir: Option<PathBuf>, indexes: HashMap<String, Arc<TokenIndex>>) -> Self {
        Self {
            state: Arc::new(State {
                data_dir,
                indexes: RwLock::new(indexes),
                providers: Mutex::new(HashMap::new()),
                next_conn: AtomicU64::new(1),
            }),
        }
    }

    /// The active index of `provider_id`, if any.
    pub fn index(&self, provider_id: &str) -> Option<Arc<TokenIndex>> {
        self.state.indexes.read().unwrap().get(provider_id).cloned()
    }

    /// Providers with an index, sorted.
    pub fn indexed_providers(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.state.indexes.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Providers with a live session, sorted.
    pub fn connected_providers(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.state.providers.lock().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn install_index(&self, provider_id: &str, index: TokenIndex) -> io::Result<()> {
        if let Some(dir) = &self.state.data_dir {
            let path = dir.join(format!("{provider_id}.phix"));
            let tmp = dir.join(format!(".{provider_id}.phix.tmp"));
            std::fs::write(&tmp, index.to_bytes())?;
            std::fs::rename(&tmp, &path)?;
        }
        self.state
            .indexes
            .write()
            .unwrap()
            .insert(provider_id.to_owned(), Arc::new(index));
        Ok(())
    }

    /// Accepts connections on `listener` until `shutdown` resolves.
    pub async fn serve(self, listener: TcpListener, shutdown: impl Future<Output = ()>) -> io::Result<()> {
        tokio::pin!(shutdown);
        loop {
            tokio::select! {
                _ = &mut shutdown => return Ok(()),
                accepted = listener.accept() => {
                    let (stream, peer) = match accepted {
                        Ok(x) => x,
                        Err(e) => {
                            log::warn!("accept failed: {e}");
                            continue;
                        }
                    };
                    let this = self.clone();
                    tokio::spawn(async move {
                        if let Err(e) = this.handle_connection(stream).await {
                            log::debug!("session with {peer} ended: {e}");
                        }
                    });
                }
            }
        }
    }

    async fn handle_connection(self, stream: TcpStream) -> io::Result<()> {
        stream.set_nodelay(true)?;
        let conn = self.state.next_conn.fetch_add(1, Ordering::Relaxed);
        let session = format!("s{conn}");
        let (read, mut write) = stream.into_split();
        let mut rx = spawn_reader(read);
        // Init: only hello is acceptable; garbage lines get 400 and another chance.
        loop {
            let Some(item) = rx.recv().await else {
                return Ok(());
            };
            match item {
                Err(e) => {
                    send(&mut write, &WireMessage::error(&session, e.code(), e.to_string())).await?;
                    if e.code() == codes::TOO_LARGE {
                        return Ok(());
                    }
                }
                Ok(WireMessage::Hello {
                    role,
                    proto,
                    algo,
                    provider_id,
                    key_id,
                    ..
                }) => {
                    if proto != PROTOCOL_VERSION {
                        let msg = format!("unsupported protocol version {proto}");
                        return send(&mut write, &WireMessage::error(&session, codes::BAD_REQUEST, msg)).await;
                    }
                    return match role {
                        Role::Client => self.client_session(&session, algo, rx, write).await,
                        Role::Provider => {
                            self.provider_session(conn, &session, algo, provider_id, key_id, rx, write)
                                .await
                        }
                    };
                }
                Ok(other) => {
                    let msg = format!("{} before hello", other.type_name());
                    return send(&mut write, &WireMessage::error(&session, codes::CONFLICT, msg)).await;
                }
            }
        }
    }

    async fn client_session<W: AsyncWrite + Unpin>(
        &self,
        session: &str,
        algorithm: Algorithm,
        mut rx: mpsc::Receiver<Incoming>,
        mut write: W,
    ) -> io::Result<()> {
        // One consistent view for the whole session: the provider handles
        // and index versions that existed at hello time.
        let snapshot: HashMap<String, (ProviderHandle, Arc<TokenIndex>)> = {
            let providers = self.state.providers.lock().unwrap();
            let indexes = self.state.indexes.read().unwrap();
            providers
                .iter()
                .filter(|(_, h)| h.algorithm == algorithm)
                .filter_map(|(id, h)| {
                    let idx = indexes.get(id)?;
                    (idx.algorithm() == algorithm && idx.key_id() == h.key_id)
                        .then(|| (id.clone(), (h.clone(), idx.clone())))
                })
                .collect()
        };
        let mut infos: Vec<ProviderInfo> = snapshot
            .iter()
            .map(|(id, (h, _))| ProviderInfo {
                provider_id: id.clone(),
                key_id: h.key_id.to_hex(),
            })
            .collect();
        infos.sort_by(|a, b| a.provider_id.cmp(&b.provider_id));
        send(
            &mut write,
            &WireMessage::HelloAck {
                session: session.to_owned(),
                providers: infos,
            },
        )
        .await?;

        // Evaluating
        while let Some(item) = rx.recv().await {
            let msg = match item {
                Ok(m) => m,
                Err(e) => {
                    send(&mut write, &WireMessage::error(session, e.code(), e.to_string())).await?;
                    if e.code() == codes::TOO_LARGE {
                        return Ok(());
                    }
                    continue;
                }
            };
            match msg {
                WireMessage::BlindEvalReq {
                    provider_id,
                    req_id,
                    elements,
                    ..
                } => {
                    let Some((handle, _)) = snapshot.get(&provider_id) else {
                        let mut err = WireMessage::error(session, codes::NOT_FOUND, format!("unknown provider {provider_id}"));
                        if let WireMessage::Error { req_id: r, .. } = &mut err {
                            *r = Some(req_id);
                        }
                        send(&mut write, &err).await?;
                        continue;
                    };
                    let reply = match relay_evaluation(handle, elements).await {
                        Ok(elements) => WireMessage::BlindEvalResp {
                            session: session.to_owned(),
                            provider_id,
                            req_id,
                            elements,
                        },
                        Err((code, message)) => WireMessage::Error {
                            session: session.to_owned(),
                            code,
                            message,
                            req_id: Some(req_id),
                        },
                    };
                    send(&mut write, &reply).await?;
                }
                WireMessage::ReportTokens { reports, .. } => {
                    // Reporting
                    let reply = match self.match_report(&snapshot, reports).await {
                        Ok(contacted) => WireMessage::ReportAck {
                            session: session.to_owned(),
                            providers_contacted: contacted,
                        },
                        Err(message) => WireMessage::error(session, codes::BAD_REQUEST, message),
                    };
                    // Done
                    return send(&mut write, &reply).await;
                }
                WireMessage::Error { code, message, .. } => {
                    log::debug!("client {session} sent error {code}: {message}");
                    return Ok(());
                }
                other => {
                    let msg = format!("{} not valid while evaluating", other.type_name());
                    return send(&mut write, &WireMessage::error(session, codes::CONFLICT, msg)).await;
                }
            }
        }
        Ok(())
    }

    /// Matches each provider's tokens against that provider's snapshot index
    /// and notifies providers with hits. Returns the number of providers the
    /// report was checked against.
    async fn match_report(
        &self,
        snapshot: &HashMap<String, (ProviderHandle, Arc<TokenIndex>)>,
        reports: Vec<ProviderTokens>,
    ) -> Result<u32, String> {
        let mut parsed = Vec::with_capacity(reports.len());
        for report in reports {
            let tokens = report
                .tokens
                .iter()
                .map(|b| Token::from_slice(&b.0))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            parsed.push((report.provider_id, tokens));
        }
        let mut contacted = 0;
        let mut seen = std::collections::HashSet::new();
        for (provider_id, tokens) in parsed {
            let Some((_, index)) = snapshot.get(&provider_id) else {
                continue;
            };
            if !seen.insert(provider_id.clone()) {
                continue;
            }
            contacted += 1;
            let matched = intersect(&tokens, index);
            if matched.is_empty() {
                continue;
            }
            let live = self.state.providers.lock().unwrap().get(&provider_id).cloned();
            let tokens = matched.iter().map(|t| Bytes(t.0.to_vec())).collect();
            match live {
                Some(h) if h.tx.send(ProviderCommand::Notify { tokens }).await.is_ok() => {}
                _ => log::warn!("provider {provider_id} has matches but is not connected"),
            }
        }
        Ok(contacted)
    }

    #[allow(clippy::too_many_arguments)]
    async fn provider_session<W: AsyncWrite + Unpin>(
        &self,
        conn: u64,
        session: &str,
        algorithm: Algorithm,
        provider_id: Option<String>,
        key_id: Option<String>,
        mut rx: mpsc::Receiver<Incoming>,
        mut write: W,
    ) -> io::Result<()> {
        let Some(provider_id) = provider_id.filter(|id| valid_provider_id(id)) else {
            return send(&mut write, &WireMessage::error(session, codes::BAD_REQUEST, "missing or invalid provider_id")).await;
        };
        let Some(key_id) = key_id.as_deref().and_then(KeyId::from_hex) else {
            return send(&mut write, &WireMessage::error(session, codes::BAD_REQUEST, "missing or invalid key_id")).await;
        };
        let (tx, mut commands) = mpsc::channel(64);
        let handle = ProviderHandle {
            conn,
            algorithm,
            key_id,
            tx,
        };
        if let Some(old) = self.state.providers.lock().unwrap().insert(provider_id.clone(), handle) {
            log::info!("provider {provider_id} reconnected, replacing session of conn {}", old.conn);
        }
        let result = self
            .serve_provider(session, &provider_id, algorithm, key_id, &mut rx, &mut commands, &mut write)
            .await;
        let mut providers = self.state.providers.lock().unwrap();
        if providers.get(&provider_id).is_some_and(|h| h.conn == conn) {
            providers.remove(&provider_id);
        }
        result
    }

    #[allow(clippy::too_many_arguments)]
    async fn serve_provider<W: AsyncWrite + Unpin>(
        &self,
        session: &str,
        provider_id: &str,
        algorithm: Algorithm,
        key_id: KeyId,
        rx: &mut mpsc::Receiver<Incoming>,
        commands: &mut mpsc::Receiver<ProviderCommand>,
        write: &mut W,
    ) -> io::Result<()> {
        send(
            write,
            &WireMessage::HelloAck {
                session: session.to_owned(),
                providers: Vec::new(),
            },
        )
        .await?;
        log::info!("provider {provider_id} connected ({algorithm}, key {key_id})");

        // Serving
        let mut pending: HashMap<u64, EvalReply> = HashMap::new();
        let mut next_req = 0u64;
        let mut upload: Vec<Token> = Vec::new();
        let mut next_seq = 0u64;
        loop {
            tokio::select! {
                item = rx.recv() => {
                    let Some(item) = item else { return Ok(()) };
                    let msg = match item {
                        Ok(m) => m,
                        Err(e) => {
                            send(write, &WireMessage::error(session, e.code(), e.to_string())).await?;
                            if e.code() == codes::TOO_LARGE {
                                return Ok(());
                            }
                            continue;
                        }
                    };
                    match msg {
                        WireMessage::IndexPut { seq, tokens, last, .. } => {
                            if seq != next_seq {
                                let m = format!("index chunk {seq} out of order, expected {next_seq}");
                                return send(write, &WireMessage::error(session, codes::CONFLICT, m)).await;
                            }
                            if tokens.len() > MAX_TOKENS_PER_CHUNK {
                                let m = format!("chunk carries {} tokens, limit {MAX_TOKENS_PER_CHUNK}", tokens.len());
                                return send(write, &WireMessage::error(session, codes::BAD_REQUEST, m)).await;
                            }
                            for b in &tokens {
                                match Token::from_slice(&b.0) {
                                    Ok(t) => upload.push(t),
                                    Err(e) => {
                                        return send(write, &WireMessage::error(session, codes::BAD_REQUEST, e.to_string())).await;
                                    }
                                }
                            }
                            next_seq += 1;
                            if last {
                                let index = TokenIndex::new(algorithm, key_id, std::mem::take(&mut upload));
                                let count = index.len() as u64;
                                if let Err(e) = self.install_index(provider_id, index) {
                                    log::error!("persisting index for {provider_id}: {e}");
                                    return send(write, &WireMessage::error(session, codes::INTERNAL, "cannot persist index")).await;
                                }
                                log::info!("installed index for {provider_id}: {count} tokens");
                                next_seq = 0;
                                send(write, &WireMessage::IndexAck { session: session.to_owned(), count }).await?;
                            }
                        }
                        WireMessage::BlindEvalResp { req_id, elements, .. } => {
                            match pending.remove(&req_id) {
                                Some(reply) => { let _ = reply.send(Ok(elements)); }
                                None => log::warn!("provider {provider_id} answered unknown request {req_id}"),
                            }
                        }
                        WireMessage::Error { code, message, req_id: Some(req_id), .. } => {
                            if let Some(reply) = pending.remove(&req_id) {
                                let _ = reply.send(Err((code, message)));
                            }
                        }
                        WireMessage::Error { code, message, .. } => {
                            log::warn!("provider {provider_id} reported error {code}: {message}");
                        }
                        other => {
                            let m = format!("{} not valid while serving", other.type_name());
                            return send(write, &WireMessage::error(session, codes::CONFLICT, m)).await;
                        }
                    }
                }
                Some(cmd) = commands.recv() => match cmd {
                    ProviderCommand::Evaluate { elements, reply } => {
                        let req_id = next_req;
                        next_req += 1;
                        pending.insert(req_id, reply);
                        let msg = WireMessage::BlindEvalReq {
                            session: session.to_owned(),
                            provider_id: provider_id.to_owned(),
                            req_id,
                            elements,
                        };
                        send(write, &msg).await?;
                    }
                    ProviderCommand::Notify { tokens } => {
                        let msg = WireMessage::MatchNotify {
                            session: session.to_owned(),
                            provider_id: provider_id.to_owned(),
                            tokens,
                        };
                        send(write, &msg).await?;
                    }
                },
            }
        }
    }
}

async fn relay_evaluation(handle: &ProviderHandle, elements: Vec<Bytes>) -> Result<Vec<Bytes>, (u16, String)> {
    let unavailable = || (codes::UNAVAILABLE, "provider unavailable".to_owned());
    let (reply, answer) = oneshot::channel();
    handle
        .tx
        .send(ProviderCommand::Evaluate { elements, reply })
        .await
        .map_err(|_| unavailable())?;
    match tokio::time::timeout(REPLY_TIMEOUT, answer).await {
        Err(_) => Err((codes::TIMEOUT, "provider did not answer".to_owned())),
        Ok(Err(_)) => Err(unavailable()),
        Ok(Ok(result)) => result,
    }
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn coordinator_serve(
    addr: &str,
    coordinator: Coordinator,
    shutdown: impl Future<Output = ()>,
) -> io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    log::info!("coordinator listening on {}", listener.local_addr()?);
    coordinator.serve(listener, shutdown).await
}
