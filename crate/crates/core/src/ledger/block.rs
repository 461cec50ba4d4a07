//! Canonical block layout.
//!
//! ```text
//! header (47)   index u32 | prev_hash [32] | timestamp_ms u48 | kind u8 | gas_used u32
//! genesis       count u16 | count x (id u32 | len u8 | name)
//! registration  address [20] | 5 x (len u8 | utf8) | embedding_digest [32]
//!               | embedding_signature [sig_len - 1] | reserved [741] (zero)
//! vote          address [20] | candidate_id u32 | tx_id [32]
//! trailer       authority_signature [sig_len - 1]
//! ```
//!
//! Integers are little-endian. Signatures are stored without their leading
//! header byte, which is a constant of the profile and is restored on decode.
//! The authority signs the SHA-256 of everything before the trailer.

use serde::{Deserialize, Serialize};

use super::{Address, LedgerError};
use crate::sigscheme::{decode_signature, Profile, Signature};

pub const HEADER_LEN: usize = 47;
pub const ADDRESS_LEN: usize = 20;
pub const HASH_LEN: usize = 32;
/// Zero-filled area after the registration payload. Must be zero on decode.
pub const RESERVED_LEN: usize = 741;
const MAX_TIMESTAMP: u64 = (1 << 48) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockKind {
    Genesis,
    Registration,
    Vote,
}

impl BlockKind {
    pub fn tag(self) -> u8 {
        match self {
            BlockKind::Genesis => 0,
            BlockKind::Registration => 1,
            BlockKind::Vote => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(BlockKind::Genesis),
            1 => Some(BlockKind::Registration),
            2 => Some(BlockKind::Vote),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub index: u64,
    pub prev_hash: [u8; 32],
    pub timestamp_ms: u64,
    pub kind: BlockKind,
    pub gas_used: u64,
}

/// The five registration fields. Each is non-empty UTF-8 within its byte budget.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PersonalInfo {
    pub full_name: String,
    pub phone: String,
    pub date_of_birth: String,
    pub citizenship_number: String,
    pub address: String,
}

impl PersonalInfo {
    /// Byte budgets in field order.
    pub const BUDGETS: [(&'static str, usize); 5] =
        [("full_name", 64), ("phone", 16), ("date_of_birth", 10), ("citizenship_number", 24), ("address", 128)];

    fn fields(&self) -> [&str; 5] {
        [&self.full_name, &self.phone, &self.date_of_birth, &self.citizenship_number, &self.address]
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        for (value, (name, budget)) in self.fields().iter().zip(Self::BUDGETS) {
            if value.trim().is_empty() {
                return Err(LedgerError::InvalidField { field: name, reason: "must not be empty" });
            }
            if value.len() > budget {
                return Err(LedgerError::InvalidField { field: name, reason: "exceeds its byte budget" });
            }
        }
        Ok(())
    }

    /// Sum of the UTF-8 lengths of the five fields.
    pub fn encoded_len(&self) -> usize {
        self.fields().iter().map(|f| f.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenesisPayload {
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationPayload {
    pub voter_address: Address,
    pub personal: PersonalInfo,
    pub embedding_digest: [u8; 32],
    pub embedding_signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VotePayload {
    pub voter_address: Address,
    pub candidate_id: u32,
    pub tx_id: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Genesis(GenesisPayload),
    Registration(RegistrationPayload),
    Vote(VotePayload),
}

impl Payload {
    pub fn kind(&self) -> BlockKind {
        match self {
            Payload::Genesis(_) => BlockKind::Genesis,
            Payload::Registration(_) => BlockKind::Registration,
            Payload::Vote(_) => BlockKind::Vote,
        }
    }

    /// Canonical payload bytes; excludes the reserved area.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Payload::Genesis(g) => {
                out.extend_from_slice(&(g.candidates.len() as u16).to_le_bytes());
                for c in &g.candidates {
                    out.extend_from_slice(&c.id.to_le_bytes());
                    out.push(c.name.len() as u8);
                    out.extend_from_slice(c.name.as_bytes());
                }
            }
            Payload::Registration(r) => {
                out.extend_from_slice(&r.voter_address.0);
                for field in r.personal.fields() {
                    out.push(field.len() as u8);
                    out.extend_from_slice(field.as_bytes());
                }
                out.extend_from_slice(&r.embedding_digest);
                out.extend_from_slice(&r.embedding_signature.encode()[1..]);
            }
            Payload::Vote(v) => {
                out.extend_from_slice(&v.voter_address.0);
                out.extend_from_slice(&v.candidate_id.to_le_bytes());
                out.extend_from_slice(&v.tx_id);
            }
        }
        out
    }

    /// Bytes the payload keeps in persistent contract storage.
    pub fn persistent_bytes(&self, payload_len: usize) -> usize {
        match self {
            Payload::Genesis(_) => 0,
            Payload::Registration(_) => payload_len,
            // one status word: has_voted plus the candidate counter bump
            Payload::Vote(_) => HASH_LEN,
        }
    }

    fn validate(&self) -> Result<(), LedgerError> {
        match self {
            Payload::Genesis(g) => {
                if g.candidates.len() > u16::MAX as usize {
                    return Err(LedgerError::InvalidField { field: "candidates", reason: "too many" });
                }
                for c in &g.candidates {
                    if c.name.is_empty() || c.name.len() > u8::MAX as usize {
                        return Err(LedgerError::InvalidField { field: "candidate name", reason: "must be 1..=255 bytes" });
                    }
                }
                Ok(())
            }
            Payload::Registration(r) => r.personal.validate(),
            Payload::Vote(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub payload: Payload,
    pub authority_signature: Signature,
}

/// Header and payload bytes (everything the authority signs over), for a
/// block that has not been signed yet.
pub(crate) fn unsigned_bytes(header: &BlockHeader, payload: &Payload) -> Result<Vec<u8>, LedgerError> {
    payload.validate()?;
    if header.index > u32::MAX as u64 {
        return Err(LedgerError::InvalidField { field: "index", reason: "exceeds 32 bits" });
    }
    if header.gas_used > u32::MAX as u64 {
        return Err(LedgerError::InvalidField { field: "gas_used", reason: "exceeds 32 bits" });
    }
    if header.timestamp_ms > MAX_TIMESTAMP {
        return Err(LedgerError::InvalidField { field: "timestamp", reason: "exceeds 48 bits" });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 2048);
    out.extend_from_slice(&(header.index as u32).to_le_bytes());
    out.extend_from_slice(&header.prev_hash);
    out.extend_from_slice(&header.timestamp_ms.to_le_bytes()[..6]);
    out.push(header.kind.tag());
    out.extend_from_slice(&(header.gas_used as u32).to_le_bytes());
    out.extend(payload.to_bytes());
    if header.kind == BlockKind::Registration {
        out.resize(out.len() + RESERVED_LEN, 0);
    }
    Ok(out)
}

impl Block {
    pub fn kind(&self) -> BlockKind {
        self.header.kind
    }

    pub fn index(&self) -> u64 {
        self.header.index
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = unsigned_bytes(&self.header, &self.payload).expect("decoded or built blocks are well-formed");
        out.extend_from_slice(&self.authority_signature.encode()[1..]);
        out
    }

    pub fn from_bytes(bytes: &[u8], profile: Profile) -> Result<Block, LedgerError> {
        let sig_body = profile.signature_len() - 1;
        if bytes.len() < HEADER_LEN + sig_body {
            return Err(LedgerError::Malformed("block shorter than header and signature"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - sig_body);
        let mut r = Reader::new(body);
        let index = r.u32()? as u64;
        let prev_hash = r.array::<32>()?;
        let mut ts = [0u8; 8];
        ts[..6].copy_from_slice(r.take(6)?);
        let timestamp_ms = u64::from_le_bytes(ts);
        let kind = BlockKind::from_tag(r.u8()?).ok_or(LedgerError::Malformed("unknown block kind"))?;
        let gas_used = r.u32()? as u64;

        let payload = match kind {
            BlockKind::Genesis => {
                let count = r.u16()? as usize;
                let mut candidates = Vec::with_capacity(count);
                for _ in 0..count {
                    let id = r.u32()?;
                    let name = r.short_str()?;
                    candidates.push(Candidate { id, name });
                }
                Payload::Genesis(GenesisPayload { candidates })
            }
            BlockKind::Registration => {
                let voter_address = Address(r.array::<20>()?);
                let personal = PersonalInfo {
                    full_name: r.short_str()?,
                    phone: r.short_str()?,
                    date_of_birth: r.short_str()?,
                    citizenship_number: r.short_str()?,
                    address: r.short_str()?,
                };
                let embedding_digest = r.array::<32>()?;
                let embedding_signature = r.signature(profile)?;
                if r.take(RESERVED_LEN)?.iter().any(|&b| b != 0) {
                    return Err(LedgerError::Malformed("reserved area is not zero"));
                }
                Payload::Registration(RegistrationPayload { voter_address, personal, embedding_digest, embedding_signature })
            }
            BlockKind::Vote => {
                Payload::Vote(VotePayload { voter_address: Address(r.array::<20>()?), candidate_id: r.u32()?, tx_id: r.array::<32>()? })
            }
        };
        if !r.is_empty() {
            return Err(LedgerError::Malformed("trailing bytes after payload"));
        }
        payload.validate().map_err(|_| LedgerError::Malformed("payload field out of range"))?;
        let authority_signature = restore_signature(trailer, profile)?;
        let block = Block { header: BlockHeader { index, prev_hash, timestamp_ms, kind, gas_used }, payload, authority_signature };
        Ok(block)
    }

    /// SHA-256 over the header and payload; what the authority signs.
    pub fn digest(&self) -> [u8; 32] {
        let bytes = self.to_bytes();
        let sig_body = self.authority_signature.profile().signature_len() - 1;
        crate::sha256(&bytes[..bytes.len() - sig_body])
    }
}

fn restore_signature(body: &[u8], profile: Profile) -> Result<Signature, LedgerError> {
    let mut enc = Vec::with_capacity(profile.signature_len());
    enc.push(profile.signature_header());
    enc.extend_from_slice(body);
    decode_signature(&enc, profile).map_err(|_| LedgerError::Malformed("signature encoding"))
}

/// Serialized size of a registration block whose five personal fields
/// total `personal_len` bytes.
pub const fn registration_block_size(profile: Profile, personal_len: usize) -> usize {
    let sig = profile.signature_len() - 1;
    HEADER_LEN + ADDRESS_LEN + 5 + personal_len + HASH_LEN + sig + RESERVED_LEN + sig
}

pub const fn vote_block_size(profile: Profile) -> usize {
    HEADER_LEN + ADDRESS_LEN + 4 + HASH_LEN + profile.signature_len() - 1
}

struct Reader<'a> {
    src: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(src: &'a [u8]) -> Self {
        Reader { src }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], LedgerError> {
        if self.src.len() < n {
            return Err(LedgerError::Malformed("truncated block"));
        }
        let (head, tail) = self.src.split_at(n);
        self.src = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], LedgerError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, LedgerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, LedgerError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, LedgerError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn short_str(&mut self) -> Result<String, LedgerError> {
        let len = self.u8()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| LedgerError::Malformed("field is not UTF-8"))
    }

    fn signature(&mut self, profile: Profile) -> Result<Signature, LedgerError> {
        restore_signature(self.take(profile.signature_len() - 1)?, profile)
    }

    fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}
