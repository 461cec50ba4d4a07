//! Enrollment and authenticated vote casting as atomic protocol steps over
//! liveness, matching, signatures, the registry and the ledger.

mod node;

use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::ledger::{Address, LedgerError};
use crate::registry::RegistryError;

pub use node::{transaction_id, Node, NodeOptions, NodeStores, SnapshotPolicy};

pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(120);
pub const SESSION_ID_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("capture classified as a spoof")]
    SpoofDetected,
    #[error("voter is already registered")]
    AlreadyRegistered,
    #[error("signed embedding does not verify")]
    InvalidSignedEmbedding,
    #[error("no registered voter with that address")]
    UnknownVoter,
    #[error("stored template signature does not verify")]
    SignatureInvalid,
    #[error("probe does not match the stored template")]
    NoMatch,
    #[error("session is unknown or already used")]
    SessionInvalid,
    #[error("session has expired")]
    SessionExpired,
    #[error("voter has already voted")]
    AlreadyVoted,
    #[error("candidate {0} does not exist")]
    UnknownCandidate(u32),
    #[error("candidate {0} already exists")]
    DuplicateCandidate(u32),
    #[error("election is not open")]
    ElectionNotOpen,
    #[error("election is closed")]
    ElectionClosed,
    #[error("candidates can only change before the election opens")]
    ElectionAlreadyOpen,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("persistence failure: {0}")]
    PersistenceFailure(String),
    #[error("chain verification failed at block {first_bad_index}: {reason}")]
    CorruptChain { first_bad_index: u64, reason: String },
    #[error("internal error: {0}")]
    Internal(String),
}

impl ProtocolError {
    /// Stable machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::SpoofDetected => "SPOOF_DETECTED",
            ProtocolError::AlreadyRegistered => "ALREADY_REGISTERED",
            ProtocolError::InvalidSignedEmbedding => "INVALID_SIGNED_EMBEDDING",
            ProtocolError::UnknownVoter => "UNKNOWN_VOTER",
            ProtocolError::SignatureInvalid => "SIGNATURE_INVALID",
            ProtocolError::NoMatch => "NO_MATCH",
            ProtocolError::SessionInvalid => "SESSION_INVALID",
            ProtocolError::SessionExpired => "SESSION_EXPIRED",
            ProtocolError::AlreadyVoted => "ALREADY_VOTED",
            ProtocolError::UnknownCandidate(_) => "UNKNOWN_CANDIDATE",
            ProtocolError::DuplicateCandidate(_) => "DUPLICATE_CANDIDATE",
            ProtocolError::ElectionNotOpen => "ELECTION_NOT_OPEN",
            ProtocolError::ElectionClosed => "ELECTION_CLOSED",
            ProtocolError::ElectionAlreadyOpen => "ELECTION_ALREADY_OPEN",
            ProtocolError::InvalidInput(_) => "INVALID_INPUT",
            ProtocolError::PersistenceFailure(_) => "PERSISTENCE_FAILURE",
            ProtocolError::CorruptChain { .. } => "CORRUPT_CHAIN",
            ProtocolError::Internal(_) => "INTERNAL",
        }
    }
}

impl From<RegistryError> for ProtocolError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::AlreadyRegistered => ProtocolError::AlreadyRegistered,
            RegistryError::InvalidSignedEmbedding => ProtocolError::InvalidSignedEmbedding,
            RegistryError::NotRegistered(_) => ProtocolError::UnknownVoter,
            RegistryError::AlreadyVoted(_) => ProtocolError::AlreadyVoted,
            RegistryError::UnknownCandidate(id) => ProtocolError::UnknownCandidate(id),
            RegistryError::DuplicateCandidate(id) => ProtocolError::DuplicateCandidate(id),
            RegistryError::ElectionAlreadyOpen => ProtocolError::ElectionAlreadyOpen,
            RegistryError::TemplateStore(m) => ProtocolError::PersistenceFailure(m),
            other => ProtocolError::Internal(other.to_string()),
        }
    }
}

impl From<LedgerError> for ProtocolError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::DuplicateCitizenship(_) => ProtocolError::AlreadyRegistered,
            LedgerError::Persistence(m) => ProtocolError::PersistenceFailure(m),
            LedgerError::InvalidField { field, reason } => ProtocolError::InvalidInput(format!("{field} {reason}")),
            LedgerError::CorruptChain { first_bad_index, reason } => ProtocolError::CorruptChain { first_bad_index, reason },
            other => ProtocolError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ElectionPhase {
    /// No genesis yet; candidates may be edited.
    Setup,
    Open,
    /// Runtime-only: no further enrollments, sessions or votes.
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EnrollmentReceipt {
    pub address: Address,
    pub block_index: u64,
    #[serde(with = "hex::serde")]
    pub embedding_digest: [u8; 32],
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuthSession {
    #[serde(with = "hex::serde")]
    pub session_id: [u8; SESSION_ID_LEN],
    pub address: Address,
    pub similarity: f64,
    pub expires_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VoteReceipt {
    #[serde(with = "hex::serde")]
    pub tx_id: [u8; 32],
    pub block_index: u64,
    pub candidate_id: u32,
    pub timestamp_ms: u64,
}

/// Timed protocol stages, reported in the order they run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Liveness,
    /// Signing the template at enrollment; reported once per committed
    /// enrollment.
    Sign,
    /// Verifying the stored signed template before matching.
    Verify,
    Match,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolEvent {
    Registered,
    Voted,
    SpoofRejected,
    /// Authentication ended with UnknownVoter, SignatureInvalid or NoMatch.
    AuthFailed,
}

/// Receives flow instrumentation. Callbacks run on the request thread and
/// must not block.
pub trait ProtocolObserver: Send + Sync {
    fn on_stage(&self, _stage: Stage, _elapsed: Duration) {}
    fn on_event(&self, _event: ProtocolEvent) {}
}

/// Observer that ignores everything.
#[derive(Debug, Default)]
pub struct NoopObserver;

impl ProtocolObserver for NoopObserver {}
