use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::Serialize;

use super::block::{unsigned_bytes, Block, BlockHeader, BlockKind, Payload};
use super::clock::Clock;
use super::gas::GasModel;
use super::store::BlockStore;
use super::LedgerError;
use crate::sigscheme::{self, Profile, PublicKey, SecretKey};

/// A committed block with its canonical bytes and hash.
#[derive(Debug, Clone)]
pub struct StoredBlock {
    pub block: Block,
    pub bytes: Vec<u8>,
    pub hash: [u8; 32],
}

impl StoredBlock {
    pub fn size(&self) -> usize {
        self.bytes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChainReport {
    pub valid: bool,
    pub length: u64,
    pub first_bad_index: Option<u64>,
}

/// Index and timestamp handed to a payload builder inside the commit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockContext {
    pub index: u64,
    pub timestamp_ms: u64,
}

#[derive(Default)]
struct ChainState {
    blocks: Vec<Arc<StoredBlock>>,
    citizenships: HashSet<String>,
    tx_ids: HashSet<[u8; 32]>,
}

impl ChainState {
    fn check_unique(&self, payload: &Payload) -> Result<(), LedgerError> {
        match payload {
            Payload::Registration(r) if self.citizenships.contains(&r.personal.citizenship_number) => {
                Err(LedgerError::DuplicateCitizenship(r.personal.citizenship_number.clone()))
            }
            Payload::Vote(v) if self.tx_ids.contains(&v.tx_id) => Err(LedgerError::DuplicateTxId(hex::encode(v.tx_id))),
            _ => Ok(()),
        }
    }

    fn push(&mut self, stored: Arc<StoredBlock>) {
        match &stored.block.payload {
            Payload::Registration(r) => {
                self.citizenships.insert(r.personal.citizenship_number.clone());
            }
            Payload::Vote(v) => {
                self.tx_ids.insert(v.tx_id);
            }
            Payload::Genesis(_) => {}
        }
        self.blocks.push(stored);
    }
}

/// Append-only, authority-signed block chain over a durable store.
///
/// Appends are serialized by the store mutex and become visible to readers
/// only after the store has persisted them.
pub struct Ledger {
    authority: PublicKey,
    gas: GasModel,
    clock: Arc<dyn Clock>,
    store: Mutex<Box<dyn BlockStore>>,
    state: RwLock<ChainState>,
}

impl Ledger {
    /// Loads and fully verifies every stored block. Refuses a chain that
    /// fails verification.
    pub fn open(mut store: Box<dyn BlockStore>, authority: PublicKey, gas: GasModel, clock: Arc<dyn Clock>) -> Result<Ledger, LedgerError> {
        let records = store.load()?;
        let report = verify_records(&records, &authority, &gas);
        if let Some(bad) = report.first_bad_index {
            return Err(LedgerError::CorruptChain { first_bad_index: bad, reason: "block failed verification".into() });
        }
        let mut state = ChainState::default();
        for bytes in records {
            let block = Block::from_bytes(&bytes, authority.profile())?;
            let hash = crate::sha256(&bytes);
            state.push(Arc::new(StoredBlock { block, bytes, hash }));
        }
        Ok(Ledger { authority, gas, clock, store: Mutex::new(store), state: RwLock::new(state) })
    }

    pub fn authority(&self) -> &PublicKey {
        &self.authority
    }

    pub fn profile(&self) -> Profile {
        self.authority.profile()
    }

    pub fn gas_model(&self) -> &GasModel {
        &self.gas
    }

    pub fn len(&self) -> u64 {
        self.state.read().blocks.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tip_hash(&self) -> [u8; 32] {
        self.state.read().blocks.last().map(|b| b.hash).unwrap_or([0; 32])
    }

    pub fn get_block(&self, index: u64) -> Result<Arc<StoredBlock>, LedgerError> {
        let state = self.state.read();
        state.blocks.get(index as usize).cloned().ok_or(LedgerError::IndexOutOfRange { index, len: state.blocks.len() as u64 })
    }

    /// Immutable view of the committed prefix.
    pub fn snapshot(&self) -> Vec<Arc<StoredBlock>> {
        self.state.read().blocks.clone()
    }

    pub fn append(&self, payload: Payload, authority: &SecretKey) -> Result<Arc<StoredBlock>, LedgerError> {
        self.append_with(authority, |_| Ok(payload))
    }

    /// Builds the payload under the append lock, once the block index and
    /// timestamp are fixed, then signs, persists and publishes the block.
    pub fn append_with<F>(&self, authority: &SecretKey, build: F) -> Result<Arc<StoredBlock>, LedgerError>
    where
        F: FnOnce(BlockContext) -> Result<Payload, LedgerError>,
    {
        if authority.public_key() != &self.authority {
            return Err(LedgerError::WrongAuthority);
        }
        let mut store = self.store.lock();
        let (index, prev_hash, prev_ts) = {
            let state = self.state.read();
            let last = state.blocks.last();
            (state.blocks.len() as u64, last.map(|b| b.hash).unwrap_or([0; 32]), last.map(|b| b.block.header.timestamp_ms).unwrap_or(0))
        };
        let timestamp_ms = self.clock.now_ms().max(prev_ts);
        let payload = build(BlockContext { index, timestamp_ms })?;

        let kind = payload.kind();
        if (index == 0) != (kind == BlockKind::Genesis) {
            return Err(LedgerError::GenesisPlacement { index });
        }
        self.state.read().check_unique(&payload)?;
        let gas_used = self.gas.for_payload(&payload);
        if gas_used > self.gas.block_gas_limit {
            return Err(LedgerError::GasLimitExceeded { gas: gas_used, limit: self.gas.block_gas_limit });
        }

        let header = BlockHeader { index, prev_hash, timestamp_ms, kind, gas_used };
        let mut bytes = unsigned_bytes(&header, &payload)?;
        let authority_signature = sigscheme::sign(authority, &crate::sha256(&bytes))?;
        bytes.extend_from_slice(&authority_signature.encode()[1..]);
        let block = Block { header, payload, authority_signature };

        store.append(&bytes)?;
        let hash = crate::sha256(&bytes);
        let stored = Arc::new(StoredBlock { block, bytes, hash });
        self.state.write().push(stored.clone());
        Ok(stored)
    }

    /// Recomputes every hash link and authority signature over the prefix
    /// committed at the time of the call.
    pub fn verify(&self) -> ChainReport {
        let blocks = self.snapshot();
        let records: Vec<&[u8]> = blocks.iter().map(|b| b.bytes.as_slice()).collect();
        verify_records(&records, &self.authority, &self.gas)
    }

    /// Vote count per candidate, from vote blocks only.
    pub fn tally(&self) -> BTreeMap<u32, u64> {
        tally(self.snapshot().iter().map(|b| &b.block))
    }
}

pub fn tally<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> BTreeMap<u32, u64> {
    let mut counts = BTreeMap::new();
    for block in blocks {
        if let Payload::Vote(v) = &block.payload {
            *counts.entry(v.candidate_id).or_insert(0) += 1;
        }
    }
    counts
}

/// Verifies a sequence of canonical block encodings: decoding, index,
/// hash link, genesis placement, timestamp order, gas, chain-wide
/// uniqueness and the authority signature.
pub fn verify_records<B: AsRef<[u8]>>(records: &[B], authority: &PublicKey, gas: &GasModel) -> ChainReport {
    let mut prev_hash = [0u8; 32];
    let mut prev_ts = 0u64;
    let mut citizenships = HashSet::new();
    let mut tx_ids = HashSet::new();
    let bad = |i: usize| ChainReport { valid: false, length: records.len() as u64, first_bad_index: Some(i as u64) };

    for (i, record) in records.iter().enumerate() {
        let bytes = record.as_ref();
        let Ok(block) = Block::from_bytes(bytes, authority.profile()) else {
            return bad(i);
        };
        let h = &block.header;
        let linked = h.index == i as u64 && h.prev_hash == prev_hash && h.timestamp_ms >= prev_ts;
        let placed = (i == 0) == (h.kind == BlockKind::Genesis);
        let unique = match &block.payload {
            Payload::Registration(r) => citizenships.insert(r.personal.citizenship_number.clone()),
            Payload::Vote(v) => tx_ids.insert(v.tx_id),
            Payload::Genesis(_) => true,
        };
        if !linked || !placed || !unique || h.gas_used != gas.for_payload(&block.payload) {
            return bad(i);
        }
        let sig_body = authority.profile().signature_len() - 1;
        let digest = crate::sha256(&bytes[..bytes.len() - sig_body]);
        if !matches!(sigscheme::verify(authority, &digest, &block.authority_signature), Ok(true)) {
            return bad(i);
        }
        prev_hash = crate::sha256(bytes);
        prev_ts = h.timestamp_ms;
    }
    ChainReport { valid: true, length: records.len() as u64, first_bad_index: None }
}
