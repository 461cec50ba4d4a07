//! Hash-chained, authority-signed block ledger with one block per
//! transaction.

pub mod block;
mod chain;
pub mod clock;
mod gas;
pub mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::sigscheme::SigError;

pub use block::{
    registration_block_size, vote_block_size, Block, BlockHeader, BlockKind, Candidate, GenesisPayload, Payload, PersonalInfo,
    RegistrationPayload, VotePayload,
};
pub use chain::{tally, verify_records, BlockContext, ChainReport, Ledger, StoredBlock};
pub use clock::{Clock, ManualClock, SystemClock};
pub use gas::GasModel;
pub use store::{split_records, BlockStore, FileBlockStore, MemoryBlockStore, Recovery};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("citizenship number {0} is already on the chain")]
    DuplicateCitizenship(String),
    #[error("transaction id {0} is already on the chain")]
    DuplicateTxId(String),
    #[error("persistence failure: {0}")]
    Persistence(String),
    #[error("malformed block: {0}")]
    Malformed(&'static str),
    #[error("invalid {field}: {reason}")]
    InvalidField { field: &'static str, reason: &'static str },
    #[error("block index {index} out of range (chain length {len})")]
    IndexOutOfRange { index: u64, len: u64 },
    #[error("chain verification failed at block {first_bad_index}: {reason}")]
    CorruptChain { first_bad_index: u64, reason: String },
    #[error("gas {gas} exceeds the block limit {limit}")]
    GasLimitExceeded { gas: u64, limit: u64 },
    #[error("a genesis block must be exactly block 0 (attempted index {index})")]
    GenesisPlacement { index: u64 },
    #[error("signing key does not belong to the ledger authority")]
    WrongAuthority,
    #[error(transparent)]
    Signature(#[from] SigError),
}

/// 20-byte voter pseudonym.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Address(pub [u8; 20]);

impl Address {
    /// First 20 bytes of SHA-256 over a domain tag and `parts`.
    pub fn derive(parts: &[&[u8]]) -> Address {
        let mut buf = b"pqballot/address/v1".to_vec();
        for p in parts {
            buf.extend_from_slice(p);
        }
        let h = crate::sha256(&buf);
        Address(h[..20].try_into().unwrap())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", self.to_hex())
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({self})")
    }
}

impl FromStr for Address {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(digits).map_err(|e| format!("address is not hex: {e}"))?;
        let arr: [u8; 20] = bytes.try_into().map_err(|_| "address must be 20 bytes".to_string())?;
        Ok(Address(arr))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::sigscheme::{generate_keypair, sign, KeyPair, Profile};

    fn authority() -> KeyPair {
        generate_keypair(Profile::F512, Some([7; 32])).unwrap()
    }

    fn nominal_personal(citizenship: &str) -> PersonalInfo {
        // 20 + 10 + 10 + 12 + 48 = 100 bytes
        PersonalInfo {
            full_name: "Aarav Sharma Kathmand".chars().take(20).collect(),
            phone: "9800000001".into(),
            date_of_birth: "1990-04-12".into(),
            citizenship_number: citizenship.into(),
            address: "Ward 4, Baneshwor, Kathmandu Metropolitan City 44".chars().take(48).collect(),
        }
    }

    fn registration(kp: &KeyPair, citizenship: &str) -> Payload {
        let digest = crate::sha256(citizenship.as_bytes());
        Payload::Registration(RegistrationPayload {
            voter_address: Address::derive(&[citizenship.as_bytes()]),
            personal: nominal_personal(citizenship),
            embedding_digest: digest,
            embedding_signature: sign(kp.secret(), &digest).unwrap(),
        })
    }

    fn genesis() -> Payload {
        Payload::Genesis(GenesisPayload { candidates: vec![Candidate { id: 1, name: "Alpha".into() }] })
    }

    fn vote(n: u8) -> Payload {
        Payload::Vote(VotePayload { voter_address: Address([n; 20]), candidate_id: 1, tx_id: [n; 32] })
    }

    fn ledger(kp: &KeyPair) -> Ledger {
        Ledger::open(
            Box::new(MemoryBlockStore::new()),
            kp.public().clone(),
            GasModel::default(),
            Arc::new(ManualClock::new(1_700_000_000_000)),
        )
        .unwrap()
    }

    #[test]
    fn genesis_then_links() {
        let kp = authority();
        let l = ledger(&kp);
        let g = l.append(genesis(), kp.secret()).unwrap();
        assert_eq!(g.block.index(), 0);
        assert_eq!(g.block.header.prev_hash, [0; 32]);
        let r = l.append(registration(&kp, "CIT-00000001"), kp.secret()).unwrap();
        let v = l.append(vote(1), kp.secret()).unwrap();
        assert_eq!(r.block.header.prev_hash, g.hash);
        assert_eq!(v.block.header.prev_hash, r.hash);
        assert_eq!(v.block.index(), 2);
        assert!(l.verify().valid);
    }

    #[test]
    fn nominal_sizes() {
        let kp = authority();
        let l = ledger(&kp);
        l.append(genesis(), kp.secret()).unwrap();
        let r = l.append(registration(&kp, "CIT-00000001"), kp.secret()).unwrap();
        let v = l.append(vote(1), kp.secret()).unwrap();
        assert_eq!(nominal_personal("CIT-00000001").encoded_len(), 100);
        assert_eq!(r.size(), 2275);
        assert_eq!(v.size(), 768);
        assert_eq!(registration_block_size(Profile::F512, 100), 2275);
        assert_eq!(vote_block_size(Profile::F512), 768);
    }

    #[test]
    fn roundtrip_all_kinds() {
        let kp = authority();
        let l = ledger(&kp);
        l.append(genesis(), kp.secret()).unwrap();
        l.append(registration(&kp, "CIT-00000001"), kp.secret()).unwrap();
        l.append(vote(1), kp.secret()).unwrap();
        for b in l.snapshot() {
            let back = Block::from_bytes(&b.bytes, Profile::F512).unwrap();
            assert_eq!(back, b.block);
            assert_eq!(back.to_bytes(), b.bytes);
        }
    }

    #[test]
    fn placement_and_uniqueness() {
        let kp = authority();
        let l = ledger(&kp);
        assert_eq!(l.append(vote(1), kp.secret()).unwrap_err(), LedgerError::GenesisPlacement { index: 0 });
        l.append(genesis(), kp.secret()).unwrap();
        assert_eq!(l.append(genesis(), kp.secret()).unwrap_err(), LedgerError::GenesisPlacement { index: 1 });
        l.append(registration(&kp, "C1"), kp.secret()).unwrap();
        assert!(matches!(l.append(registration(&kp, "C1"), kp.secret()), Err(LedgerError::DuplicateCitizenship(_))));
        l.append(vote(3), kp.secret()).unwrap();
        assert!(matches!(l.append(vote(3), kp.secret()), Err(LedgerError::DuplicateTxId(_))));
        assert_eq!(l.len(), 3);
    }

    #[test]
    fn failed_persist_leaves_chain_unchanged() {
        let kp = authority();
        let store = MemoryBlockStore::new();
        let l = Ledger::open(Box::new(store.clone()), kp.public().clone(), GasModel::default(), Arc::new(SystemClock)).unwrap();
        l.append(genesis(), kp.secret()).unwrap();
        store.fail_after(0);
        assert!(matches!(l.append(vote(1), kp.secret()), Err(LedgerError::Persistence(_))));
        assert_eq!(l.len(), 1);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn foreign_signer_rejected() {
        let kp = authority();
        let other = generate_keypair(Profile::F512, Some([8; 32])).unwrap();
        let l = ledger(&kp);
        assert_eq!(l.append(genesis(), other.secret()).unwrap_err(), LedgerError::WrongAuthority);
    }

    #[test]
    fn empty_payload_costs_base() {
        let gas = GasModel::default();
        assert_eq!(gas.compute(0, 0), gas.base_cost);
        let g = Payload::Genesis(GenesisPayload { candidates: vec![] });
        assert_eq!(gas.for_payload(&g), gas.base_cost + 2 * gas.per_byte_cost);
    }

    #[test]
    fn tally_counts_votes() {
        let kp = authority();
        let l = ledger(&kp);
        assert!(l.tally().is_empty());
        l.append(genesis(), kp.secret()).unwrap();
        for (n, c) in [(1u8, 1u32), (2, 1), (3, 2), (4, 1), (5, 2)] {
            let p = Payload::Vote(VotePayload { voter_address: Address([n; 20]), candidate_id: c, tx_id: [n; 32] });
            l.append(p, kp.secret()).unwrap();
        }
        assert_eq!(l.tally().into_iter().collect::<Vec<_>>(), vec![(1, 3), (2, 2)]);
    }

    #[test]
    fn reopen_verifies_and_restores() {
        let kp = authority();
        let store = MemoryBlockStore::new();
        let l = Ledger::open(Box::new(store.clone()), kp.public().clone(), GasModel::default(), Arc::new(SystemClock)).unwrap();
        l.append(genesis(), kp.secret()).unwrap();
        l.append(registration(&kp, "C1"), kp.secret()).unwrap();
        let tip = l.tip_hash();
        drop(l);
        let l = Ledger::open(Box::new(store.clone()), kp.public().clone(), GasModel::default(), Arc::new(SystemClock)).unwrap();
        assert_eq!(l.tip_hash(), tip);
        assert!(matches!(l.append(registration(&kp, "C1"), kp.secret()), Err(LedgerError::DuplicateCitizenship(_))));

        let mut records = store.records();
        records[1][60] ^= 1;
        let bad = MemoryBlockStore::with_records(records);
        let err = Ledger::open(Box::new(bad), kp.public().clone(), GasModel::default(), Arc::new(SystemClock)).err().unwrap();
        assert!(matches!(err, LedgerError::CorruptChain { first_bad_index: 1, .. }));
    }

    #[test]
    fn address_text_forms() {
        let a = Address([0xab; 20]);
        assert_eq!(a.to_string(), format!("0x{}", "ab".repeat(20)));
        assert_eq!(a.to_string().parse::<Address>().unwrap(), a);
        assert_eq!("ab".repeat(20).parse::<Address>().unwrap(), a);
        assert!("0x12".parse::<Address>().is_err());
    }
}
