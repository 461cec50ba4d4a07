//! Voter and candidate state machine driven by ledger blocks.
//!
//! Every mutation corresponds to exactly one committed block, so the whole
//! registry can be rebuilt by replaying the ledger together with the
//! off-chain template log.

pub mod snapshot;
pub mod templates;

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::biometric::{verify_signed_embedding, FaceEmbedding, SignedEmbedding};
use crate::ledger::{Address, Block, Payload, PersonalInfo};
use crate::sigscheme::PublicKey;

pub use snapshot::Snapshot;
pub use templates::{index as index_templates, FileTemplateStore, MemoryTemplateStore, TemplateRecord, TemplateStore};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("voter is already registered")]
    AlreadyRegistered,
    #[error("signed embedding does not verify against the template")]
    InvalidSignedEmbedding,
    #[error("address {0} is not registered")]
    NotRegistered(Address),
    #[error("address {0} has already voted")]
    AlreadyVoted(Address),
    #[error("candidate {0} does not exist")]
    UnknownCandidate(u32),
    #[error("candidate {0} already exists")]
    DuplicateCandidate(u32),
    #[error("candidates cannot change once the election is open")]
    ElectionAlreadyOpen,
    #[error("no template for the registration in block {0}")]
    MissingTemplate(u64),
    #[error("replay failed at block {index}: {reason}")]
    Replay { index: u64, reason: String },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("template store: {0}")]
    TemplateStore(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoterRecord {
    pub address: Address,
    pub personal: PersonalInfo,
    pub signed_embedding: SignedEmbedding,
    pub template: FaceEmbedding,
    pub is_registered: bool,
    pub has_voted: bool,
    pub block_index: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateRecord {
    pub candidate_id: u32,
    pub display_name: String,
    pub vote_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    VoterRegistered,
    CastVote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Event {
    pub kind: EventKind,
    pub address: Address,
    pub payload_summary: String,
    pub block_index: u64,
}

/// Address of a voter, derived from the signed embedding that binds them.
pub fn derive_address(signed: &SignedEmbedding) -> Address {
    Address::derive(&[&signed.embedding_digest, &signed.signature.encode()])
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    voters: BTreeMap<Address, VoterRecord>,
    citizenships: HashMap<String, Address>,
    candidates: BTreeMap<u32, CandidateRecord>,
    events: Vec<Event>,
    open: bool,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn add_candidate(&mut self, id: u32, name: impl Into<String>) -> Result<(), RegistryError> {
        if self.open {
            return Err(RegistryError::ElectionAlreadyOpen);
        }
        if self.candidates.contains_key(&id) {
            return Err(RegistryError::DuplicateCandidate(id));
        }
        self.candidates.insert(id, CandidateRecord { candidate_id: id, display_name: name.into(), vote_count: 0 });
        Ok(())
    }

    /// Freezes the candidate list.
    pub fn open(&mut self) {
        self.open = true;
    }

    pub fn get_voter(&self, address: &Address) -> Option<&VoterRecord> {
        self.voters.get(address)
    }

    pub fn voter_by_citizenship(&self, citizenship: &str) -> Option<&VoterRecord> {
        self.citizenships.get(citizenship).and_then(|a| self.voters.get(a))
    }

    pub fn voters(&self) -> impl Iterator<Item = &VoterRecord> {
        self.voters.values()
    }

    /// Candidates in id order.
    pub fn list_candidates(&self) -> Vec<CandidateRecord> {
        self.candidates.values().cloned().collect()
    }

    pub fn has_candidate(&self, id: u32) -> bool {
        self.candidates.contains_key(&id)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn voted_count(&self) -> usize {
        self.voters.values().filter(|v| v.has_voted).count()
    }

    /// Fault injection: swaps a stored template without touching its
    /// signature.
    #[doc(hidden)]
    pub fn overwrite_template(&mut self, address: &Address, template: FaceEmbedding) -> bool {
        self.voters.get_mut(address).map(|v| v.template = template).is_some()
    }

    /// Checks a registration without applying it.
    pub fn check_registration(
        &self,
        personal: &PersonalInfo,
        signed: &SignedEmbedding,
        template: &FaceEmbedding,
        signer: &PublicKey,
    ) -> Result<Address, RegistryError> {
        let address = derive_address(signed);
        if self.citizenships.contains_key(&personal.citizenship_number) || self.voters.contains_key(&address) {
            return Err(RegistryError::AlreadyRegistered);
        }
        if !matches!(verify_signed_embedding(signer, template, signed), Ok(true)) {
            return Err(RegistryError::InvalidSignedEmbedding);
        }
        Ok(address)
    }

    pub fn register_voter(
        &mut self,
        personal: PersonalInfo,
        signed: SignedEmbedding,
        template: FaceEmbedding,
        signer: &PublicKey,
        block_index: u64,
    ) -> Result<(Address, Event), RegistryError> {
        let address = self.check_registration(&personal, &signed, &template, signer)?;
        let event = Event {
            kind: EventKind::VoterRegistered,
            address,
            payload_summary: format!("embedding_digest={}", hex::encode(signed.embedding_digest)),
            block_index,
        };
        self.citizenships.insert(personal.citizenship_number.clone(), address);
        self.voters.insert(
            address,
            VoterRecord { address, personal, signed_embedding: signed, template, is_registered: true, has_voted: false, block_index },
        );
        self.events.push(event.clone());
        Ok((address, event))
    }

    pub fn check_vote(&self, address: &Address, candidate_id: u32) -> Result<(), RegistryError> {
        let voter = self.voters.get(address).ok_or(RegistryError::NotRegistered(*address))?;
        if voter.has_voted {
            return Err(RegistryError::AlreadyVoted(*address));
        }
        if !self.candidates.contains_key(&candidate_id) {
            return Err(RegistryError::UnknownCandidate(candidate_id));
        }
        Ok(())
    }

    pub fn mark_voted(&mut self, address: &Address, candidate_id: u32, block_index: u64) -> Result<Event, RegistryError> {
        self.check_vote(address, candidate_id)?;
        self.voters.get_mut(address).expect("checked").has_voted = true;
        self.candidates.get_mut(&candidate_id).expect("checked").vote_count += 1;
        let event =
            Event { kind: EventKind::CastVote, address: *address, payload_summary: format!("candidate_id={candidate_id}"), block_index };
        self.events.push(event.clone());
        Ok(event)
    }

    /// Applies one committed block. Registration blocks need the template
    /// whose digest the block carries.
    pub fn apply_block(
        &mut self,
        block: &Block,
        templates: &HashMap<[u8; 32], FaceEmbedding>,
        authority: &PublicKey,
    ) -> Result<(), RegistryError> {
        let index = block.index();
        let replay_err = |e: RegistryError| RegistryError::Replay { index, reason: e.to_string() };
        match &block.payload {
            Payload::Genesis(g) => {
                for c in &g.candidates {
                    self.add_candidate(c.id, c.name.clone()).map_err(replay_err)?;
                }
                self.open();
            }
            Payload::Registration(r) => {
                let template = templates.get(&r.embedding_digest).ok_or(RegistryError::MissingTemplate(index))?;
                let signed = SignedEmbedding {
                    embedding_digest: r.embedding_digest,
                    signature: r.embedding_signature.clone(),
                    signer: authority.fingerprint(),
                };
                let (address, _) =
                    self.register_voter(r.personal.clone(), signed, template.clone(), authority, index).map_err(replay_err)?;
                if address != r.voter_address {
                    return Err(RegistryError::Replay { index, reason: "address does not match signed embedding".into() });
                }
            }
            Payload::Vote(v) => {
                self.mark_voted(&v.voter_address, v.candidate_id, index).map_err(replay_err)?;
            }
        }
        Ok(())
    }

    /// Rebuilds the registry from `blocks`, starting from `base`.
    pub fn replay<'a>(
        mut base: Registry,
        blocks: impl IntoIterator<Item = &'a Block>,
        templates: &HashMap<[u8; 32], FaceEmbedding>,
        authority: &PublicKey,
    ) -> Result<Registry, RegistryError> {
        for block in blocks {
            base.apply_block(block, templates, authority)?;
        }
        Ok(base)
    }
}
