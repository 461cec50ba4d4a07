use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dashmap::DashMap;
use parking_lot::{Mutex, RwLock};
use rand::RngCore;

use super::{
    AuthSession, ElectionPhase, EnrollmentReceipt, NoopObserver, ProtocolError, ProtocolEvent, ProtocolObserver, Stage, VoteReceipt,
    DEFAULT_SESSION_TTL, SESSION_ID_LEN,
};
use crate::biometric::{
    find_best_match, liveness_gate, sign_embedding, verify_signed_embedding, CaptureSample, FaceEmbedding, Liveness,
    DEFAULT_MATCH_THRESHOLD, DEFAULT_SPOOF_THRESHOLD,
};
use crate::ledger::{
    verify_records, Address, BlockStore, Candidate, ChainReport, Clock, GasModel, GenesisPayload, Ledger, Payload, PersonalInfo,
    RegistrationPayload, StoredBlock, VotePayload,
};
use crate::registry::{index_templates, CandidateRecord, Registry, Snapshot, TemplateRecord, TemplateStore, VoterRecord};
use crate::sigscheme::KeyPair;

/// Expired sessions are swept after this many issues.
const SESSION_SWEEP_INTERVAL: u64 = 256;

#[derive(Debug, Clone)]
pub struct SnapshotPolicy {
    pub path: PathBuf,
    /// Write a snapshot whenever the chain length is a multiple of this.
    pub every_blocks: u64,
}

#[derive(Debug, Clone)]
pub struct NodeOptions {
    pub match_threshold: f64,
    pub spoof_threshold: f64,
    pub session_ttl: Duration,
    pub gas: GasModel,
    pub snapshot: Option<SnapshotPolicy>,
}

impl Default for NodeOptions {
    fn default() -> Self {
        NodeOptions {
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            spoof_threshold: DEFAULT_SPOOF_THRESHOLD,
            session_ttl: DEFAULT_SESSION_TTL,
            gas: GasModel::default(),
            snapshot: None,
        }
    }
}

pub struct NodeStores {
    pub blocks: Box<dyn BlockStore>,
    pub templates: Box<dyn TemplateStore>,
}

struct SessionEntry {
    address: Address,
    expires_at_ms: u64,
}

/// Thread-safe protocol facade. Reads and authentication run concurrently;
/// every mutation goes through the single commit lock, which orders the
/// template log, the ledger append and the registry update.
pub struct Node {
    options: NodeOptions,
    authority: KeyPair,
    ledger: Ledger,
    registry: RwLock<Registry>,
    templates: Mutex<Box<dyn TemplateStore>>,
    commit: Mutex<()>,
    sessions: DashMap<[u8; SESSION_ID_LEN], SessionEntry>,
    sessions_issued: AtomicU64,
    phase: RwLock<ElectionPhase>,
    clock: Arc<dyn Clock>,
    observer: Arc<dyn ProtocolObserver>,
}

impl Node {
    /// Recovers the node: verifies the whole ledger, restores the registry
    /// from a matching snapshot if present and replays the remaining blocks.
    pub fn open(authority: KeyPair, stores: NodeStores, clock: Arc<dyn Clock>, options: NodeOptions) -> Result<Node, ProtocolError> {
        let NodeStores { blocks, templates: mut template_store } = stores;
        let ledger = Ledger::open(blocks, authority.public().clone(), options.gas, clock.clone())?;
        let templates = index_templates(template_store.load()?);
        let chain = ledger.snapshot();

        let mut base = Registry::new();
        let mut start = 0usize;
        if let Some(policy) = &options.snapshot {
            match Snapshot::load(&policy.path, ledger.profile()) {
                Ok(Some(snap)) if snapshot_matches(&snap, &chain) => {
                    start = snap.height as usize;
                    base = snap.registry;
                }
                Ok(Some(_)) => tracing::warn!("registry snapshot does not match the ledger; replaying from genesis"),
                Ok(None) => {}
                Err(e) => tracing::warn!(error = %e, "unreadable registry snapshot; replaying from genesis"),
            }
        }
        let registry = Registry::replay(base, chain[start..].iter().map(|b| &b.block), &templates, authority.public())?;
        let phase = if chain.is_empty() { ElectionPhase::Setup } else { ElectionPhase::Open };

        Ok(Node {
            options,
            authority,
            ledger,
            registry: RwLock::new(registry),
            templates: Mutex::new(template_store),
            commit: Mutex::new(()),
            sessions: DashMap::new(),
            sessions_issued: AtomicU64::new(0),
            phase: RwLock::new(phase),
            clock,
            observer: Arc::new(NoopObserver),
        })
    }

    pub fn with_observer(mut self, observer: Arc<dyn ProtocolObserver>) -> Self {
        self.observer = observer;
        self
    }

    pub fn options(&self) -> &NodeOptions {
        &self.options
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn phase(&self) -> ElectionPhase {
        *self.phase.read()
    }

    /// Clone of the live registry state.
    pub fn registry_snapshot(&self) -> Registry {
        self.registry.read().clone()
    }

    pub fn voter(&self, address: &Address) -> Option<VoterRecord> {
        self.registry.read().get_voter(address).cloned()
    }

    pub fn candidates(&self) -> Vec<CandidateRecord> {
        self.registry.read().list_candidates()
    }

    pub fn events(&self) -> Vec<crate::registry::Event> {
        self.registry.read().events().to_vec()
    }

    pub fn add_candidate(&self, id: u32, name: &str) -> Result<(), ProtocolError> {
        let _commit = self.commit.lock();
        if self.phase() != ElectionPhase::Setup {
            return Err(ProtocolError::ElectionAlreadyOpen);
        }
        if name.is_empty() || name.len() > u8::MAX as usize {
            return Err(ProtocolError::InvalidInput("candidate name must be 1..=255 bytes".into()));
        }
        Ok(self.registry.write().add_candidate(id, name)?)
    }

    /// Writes the genesis block with the candidate manifest and opens
    /// the election.
    pub fn open_election(&self) -> Result<Arc<StoredBlock>, ProtocolError> {
        let _commit = self.commit.lock();
        if self.phase() != ElectionPhase::Setup {
            return Err(ProtocolError::ElectionAlreadyOpen);
        }
        let candidates =
            self.registry.read().list_candidates().into_iter().map(|c| Candidate { id: c.candidate_id, name: c.display_name }).collect();
        let block = self.ledger.append(Payload::Genesis(GenesisPayload { candidates }), self.authority.secret())?;
        self.registry.write().open();
        *self.phase.write() = ElectionPhase::Open;
        self.after_commit();
        Ok(block)
    }

    /// Stops enrollments and voting until restart. Outstanding sessions are
    /// dropped.
    pub fn close_election(&self) {
        let _commit = self.commit.lock();
        *self.phase.write() = ElectionPhase::Closed;
        self.sessions.clear();
    }

    fn require_open(&self) -> Result<(), ProtocolError> {
        match self.phase() {
            ElectionPhase::Open => Ok(()),
            ElectionPhase::Setup => Err(ProtocolError::ElectionNotOpen),
            ElectionPhase::Closed => Err(ProtocolError::ElectionClosed),
        }
    }

    fn gate(&self, sample: &CaptureSample) -> Result<(), ProtocolError> {
        let t = Instant::now();
        let verdict = liveness_gate(sample, self.options.spoof_threshold);
        self.observer.on_stage(Stage::Liveness, t.elapsed());
        if verdict == Liveness::Spoof {
            self.observer.on_event(ProtocolEvent::SpoofRejected);
            return Err(ProtocolError::SpoofDetected);
        }
        Ok(())
    }

    /// Liveness, then sign the template, then commit template log, block and
    /// registry entry together. Nothing is committed on failure.
    pub fn enroll(&self, personal: PersonalInfo, sample: CaptureSample) -> Result<EnrollmentReceipt, ProtocolError> {
        self.require_open()?;
        personal.validate()?;
        self.gate(&sample)?;
        let template = sample.embedding;
        if self.registry.read().voter_by_citizenship(&personal.citizenship_number).is_some() {
            return Err(ProtocolError::AlreadyRegistered);
        }

        let t = Instant::now();
        let signed = sign_embedding(self.authority.secret(), &template).map_err(|e| ProtocolError::Internal(e.to_string()))?;
        let sign_elapsed = t.elapsed();

        let _commit = self.commit.lock();
        self.require_open()?;
        let address = self.registry.read().check_registration(&personal, &signed, &template, self.authority.public())?;
        self.templates.lock().append(&TemplateRecord::new(template.clone()))?;
        let payload = Payload::Registration(RegistrationPayload {
            voter_address: address,
            personal: personal.clone(),
            embedding_digest: signed.embedding_digest,
            embedding_signature: signed.signature.clone(),
        });
        let block = self.ledger.append(payload, self.authority.secret())?;
        let index = block.block.index();
        self.registry.write().register_voter(personal, signed.clone(), template, self.authority.public(), index)?;
        self.after_commit();

        self.observer.on_stage(Stage::Sign, sign_elapsed);
        self.observer.on_event(ProtocolEvent::Registered);
        Ok(EnrollmentReceipt {
            address,
            block_index: index,
            embedding_digest: signed.embedding_digest,
            timestamp_ms: block.block.header.timestamp_ms,
        })
    }

    /// Checks, in this order: liveness, the signature over the stored
    /// template, and the probe-to-template similarity. The first failure
    /// ends the flow.
    pub fn authenticate(&self, address: &Address, sample: CaptureSample) -> Result<AuthSession, ProtocolError> {
        self.require_open()?;
        self.gate(&sample)?;
        let fail = |e: ProtocolError| {
            self.observer.on_event(ProtocolEvent::AuthFailed);
            Err(e)
        };
        let Some((template, signed)) = self.registry.read().get_voter(address).map(|v| (v.template.clone(), v.signed_embedding.clone()))
        else {
            return fail(ProtocolError::UnknownVoter);
        };

        let t = Instant::now();
        let authentic = matches!(verify_signed_embedding(self.authority.public(), &template, &signed), Ok(true));
        self.observer.on_stage(Stage::Verify, t.elapsed());
        if !authentic {
            return fail(ProtocolError::SignatureInvalid);
        }

        let t = Instant::now();
        let result = find_best_match(&sample.embedding, [(address, &template)], self.options.match_threshold)
            .map_err(|e| ProtocolError::Internal(e.to_string()))?;
        self.observer.on_stage(Stage::Match, t.elapsed());
        if !result.accepted {
            return fail(ProtocolError::NoMatch);
        }

        let mut session_id = [0u8; SESSION_ID_LEN];
        rand::rngs::OsRng.fill_bytes(&mut session_id);
        let now = self.clock.now_ms();
        let expires_at_ms = now + self.options.session_ttl.as_millis() as u64;
        if self.sessions_issued.fetch_add(1, Ordering::Relaxed) % SESSION_SWEEP_INTERVAL == SESSION_SWEEP_INTERVAL - 1 {
            self.sessions.retain(|_, s| s.expires_at_ms > now);
        }
        self.sessions.insert(session_id, SessionEntry { address: *address, expires_at_ms });
        Ok(AuthSession { session_id, address: *address, similarity: result.similarity, expires_at_ms })
    }

    /// Consumes the session, then commits the vote block and the has_voted
    /// flag together. An unknown candidate leaves the session usable.
    pub fn cast_vote(&self, session_id: &[u8; SESSION_ID_LEN], candidate_id: u32) -> Result<VoteReceipt, ProtocolError> {
        self.require_open()?;
        if !self.registry.read().has_candidate(candidate_id) {
            return Err(ProtocolError::UnknownCandidate(candidate_id));
        }
        let (_, session) = self.sessions.remove(session_id).ok_or(ProtocolError::SessionInvalid)?;
        if self.clock.now_ms() >= session.expires_at_ms {
            return Err(ProtocolError::SessionExpired);
        }
        let address = session.address;

        let _commit = self.commit.lock();
        self.require_open()?;
        self.registry.read().check_vote(&address, candidate_id)?;
        let block = self.ledger.append_with(self.authority.secret(), |ctx| {
            Ok(Payload::Vote(VotePayload {
                voter_address: address,
                candidate_id,
                tx_id: transaction_id(&address, candidate_id, ctx.timestamp_ms, session_id),
            }))
        })?;
        let index = block.block.index();
        self.registry.write().mark_voted(&address, candidate_id, index)?;
        self.after_commit();

        self.observer.on_event(ProtocolEvent::Voted);
        let Payload::Vote(v) = &block.block.payload else { unreachable!("vote append yields a vote block") };
        Ok(VoteReceipt { tx_id: v.tx_id, block_index: index, candidate_id, timestamp_ms: block.block.header.timestamp_ms })
    }

    /// True iff the block at the receipt's index is a vote with the same
    /// transaction id and candidate, and the chain verifies up to it.
    pub fn audit_receipt(&self, receipt: &VoteReceipt) -> bool {
        let Ok(block) = self.ledger.get_block(receipt.block_index) else {
            return false;
        };
        let Payload::Vote(v) = &block.block.payload else {
            return false;
        };
        if v.tx_id != receipt.tx_id || v.candidate_id != receipt.candidate_id {
            return false;
        }
        let prefix = self.ledger.snapshot();
        let records: Vec<&[u8]> = prefix[..=receipt.block_index as usize].iter().map(|b| b.bytes.as_slice()).collect();
        verify_records(&records, self.ledger.authority(), self.ledger.gas_model()).valid
    }

    /// Vote count per candidate from the ledger; candidates without votes
    /// are listed with zero.
    pub fn results(&self) -> BTreeMap<u32, u64> {
        let mut counts: BTreeMap<u32, u64> = self.candidates().iter().map(|c| (c.candidate_id, 0)).collect();
        counts.extend(self.ledger.tally());
        counts
    }

    pub fn verify_chain(&self) -> ChainReport {
        self.ledger.verify()
    }

    /// Writes a registry snapshot at the current height, if configured.
    pub fn write_snapshot(&self) -> Result<(), ProtocolError> {
        let _commit = self.commit.lock();
        self.save_snapshot()
    }

    fn save_snapshot(&self) -> Result<(), ProtocolError> {
        let Some(policy) = &self.options.snapshot else { return Ok(()) };
        let snap = Snapshot { height: self.ledger.len(), tip_hash: self.ledger.tip_hash(), registry: self.registry_snapshot() };
        Ok(snap.save(&policy.path)?)
    }

    /// Called with the commit lock held.
    fn after_commit(&self) {
        let Some(policy) = &self.options.snapshot else { return };
        if policy.every_blocks > 0 && self.ledger.len().is_multiple_of(policy.every_blocks) {
            if let Err(e) = self.save_snapshot() {
                tracing::warn!(error = %e, "registry snapshot failed");
            }
        }
    }

    /// Fault injection: replaces a voter's stored template in memory only,
    /// leaving its signature untouched.
    #[doc(hidden)]
    pub fn overwrite_stored_template(&self, address: &Address, template: FaceEmbedding) -> bool {
        self.registry.write().overwrite_template(address, template)
    }
}

/// `SHA-256(address ‖ candidate_id u32 LE ‖ timestamp_ms u64 LE ‖ session_id)`.
pub fn transaction_id(address: &Address, candidate_id: u32, timestamp_ms: u64, session_id: &[u8]) -> [u8; 32] {
    let mut buf = Vec::with_capacity(20 + 4 + 8 + session_id.len());
    buf.extend_from_slice(&address.0);
    buf.extend_from_slice(&candidate_id.to_le_bytes());
    buf.extend_from_slice(&timestamp_ms.to_le_bytes());
    buf.extend_from_slice(session_id);
    crate::sha256(&buf)
}

fn snapshot_matches(snap: &Snapshot, chain: &[Arc<StoredBlock>]) -> bool {
    match snap.height {
        0 => snap.tip_hash == [0; 32],
        h => chain.get(h as usize - 1).is_some_and(|b| b.hash == snap.tip_hash),
    }
}
