//! HTTP node: configuration, startup recovery, REST API and metrics.

pub mod api;
pub mod config;
pub mod metrics;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::ledger::{Block, FileBlockStore, SystemClock};
use crate::protocol::{Node, NodeOptions, NodeStores, ProtocolError, SnapshotPolicy};
use crate::registry::FileTemplateStore;
use crate::sigscheme::keyfile::{FileKeyStore, KeyFileError, KeyStore, DEFAULT_KDF_ROUNDS};
use crate::sigscheme::{KeyPair, Profile};

pub use api::{router, AppState};
pub use config::{CandidateSpec, ConfigError, ConfigLayer, NodeConfig};
pub use metrics::MetricsRegistry;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("config field `key_passphrase`: required (set it in the config file or PQBALLOT_KEY_PASSPHRASE)")]
    MissingPassphrase,
    #[error("data directory {path}: {reason}")]
    DataDir { path: PathBuf, reason: String },
    #[error("authority key: {0}")]
    Key(#[from] KeyFileError),
    #[error("authority key is {key} but the config selects {config}")]
    ProfileMismatch { config: Profile, key: Profile },
    #[error("refusing to start: chain verification failed at block {first_bad_index}: {reason}")]
    CorruptChain { first_bad_index: u64, reason: String },
    #[error("config field `candidates`: a fresh ledger needs at least one candidate")]
    NoCandidates,
    #[error("config field `candidates`: {0}")]
    CandidateMismatch(String),
    #[error("recovery failed: {0}")]
    Recovery(ProtocolError),
    #[error("address {0} is already in use")]
    PortBusy(SocketAddr),
    #[error("cannot listen on {addr}: {reason}")]
    Bind { addr: SocketAddr, reason: String },
}

impl From<ProtocolError> for StartupError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::CorruptChain { first_bad_index, reason } => StartupError::CorruptChain { first_bad_index, reason },
            other => StartupError::Recovery(other),
        }
    }
}

/// Loads the authority key, creating it on first start.
pub fn load_or_create_authority(config: &NodeConfig) -> Result<KeyPair, StartupError> {
    let passphrase = config.key_passphrase.clone().ok_or(StartupError::MissingPassphrase)?;
    let store = FileKeyStore::new(&config.authority_key, passphrase);
    let keys = if store.exists() {
        store.load()?
    } else {
        tracing::info!(path = %config.authority_key.display(), "creating authority key");
        store.create(config.profile, None, DEFAULT_KDF_ROUNDS)?
    };
    if keys.profile() != config.profile {
        return Err(StartupError::ProfileMismatch { config: config.profile, key: keys.profile() });
    }
    Ok(keys)
}

/// Recovers the node from the data directory and opens the election on a
/// fresh ledger.
pub fn start_node(config: &NodeConfig, metrics: Arc<MetricsRegistry>) -> Result<Node, StartupError> {
    std::fs::create_dir_all(&config.data_dir)
        .map_err(|e| StartupError::DataDir { path: config.data_dir.clone(), reason: e.to_string() })?;
    let authority = load_or_create_authority(config)?;

    let profile = config.profile;
    let blocks = FileBlockStore::open(config.ledger_path())
        .map_err(ProtocolError::from)?
        .with_record_validator(move |bytes| Block::from_bytes(bytes, profile).is_ok());
    let templates = FileTemplateStore::open(config.templates_path()).map_err(ProtocolError::from)?;
    let options = NodeOptions {
        match_threshold: config.match_threshold,
        spoof_threshold: config.spoof_threshold,
        session_ttl: config.session_ttl,
        gas: config.gas,
        snapshot: (config.snapshot_every > 0).then(|| SnapshotPolicy { path: config.snapshot_path(), every_blocks: config.snapshot_every }),
    };
    let stores = NodeStores { blocks: Box::new(blocks), templates: Box::new(templates) };
    let node = Node::open(authority, stores, Arc::new(SystemClock), options)?.with_observer(metrics);

    if node.ledger().is_empty() {
        if config.candidates.is_empty() {
            return Err(StartupError::NoCandidates);
        }
        for c in &config.candidates {
            node.add_candidate(c.id, &c.name)?;
        }
        node.open_election()?;
        tracing::info!(candidates = config.candidates.len(), "wrote genesis block");
    } else if !config.candidates.is_empty() {
        let on_chain: Vec<(u32, String)> = node.candidates().into_iter().map(|c| (c.candidate_id, c.display_name)).collect();
        let mut configured: Vec<(u32, String)> = config.candidates.iter().map(|c| (c.id, c.name.clone())).collect();
        configured.sort();
        if configured != on_chain {
            return Err(StartupError::CandidateMismatch(format!("configured candidates differ from the genesis manifest {on_chain:?}")));
        }
    }
    let report = node.verify_chain();
    tracing::info!(length = report.length, "ledger recovered and verified");
    Ok(node)
}

/// A node serving HTTP on a background task.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub state: AppState,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    /// Stops accepting requests, waits for in-flight ones and writes a
    /// final registry snapshot.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.finish().await
    }

    /// Runs until `signal` resolves, then shuts down.
    pub async fn run_until(self, signal: impl Future<Output = ()>) -> std::io::Result<()> {
        signal.await;
        self.shutdown().await
    }

    async fn finish(self) -> std::io::Result<()> {
        let result = self.task.await.map_err(std::io::Error::other)?;
        let node = self.state.node.clone();
        if let Err(e) = tokio::task::spawn_blocking(move || node.write_snapshot()).await.map_err(std::io::Error::other)? {
            tracing::warn!(error = %e, "final registry snapshot failed");
        }
        result
    }
}

/// Recovers the node and starts serving on `config.listen`.
pub async fn launch(config: NodeConfig) -> Result<ServerHandle, StartupError> {
    let metrics = Arc::new(MetricsRegistry::new());
    let cfg = config.clone();
    let m = metrics.clone();
    let node = tokio::task::spawn_blocking(move || start_node(&cfg, m))
        .await
        .map_err(|e| StartupError::Recovery(ProtocolError::Internal(e.to_string())))??;
    let listener = tokio::net::TcpListener::bind(config.listen).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => StartupError::PortBusy(config.listen),
        _ => StartupError::Bind { addr: config.listen, reason: e.to_string() },
    })?;
    let addr = listener.local_addr().map_err(|e| StartupError::Bind { addr: config.listen, reason: e.to_string() })?;
    let state = AppState { node: Arc::new(node), metrics };
    let app = router(state.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, "listening");
    Ok(ServerHandle { addr, state, shutdown: Some(tx), task })
}
