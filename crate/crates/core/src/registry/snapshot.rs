//! Periodic registry snapshot, so a restart replays only the blocks after
//! it. A snapshot is trusted only when its tip hash equals the hash of the
//! verified ledger block at its height; otherwise the node replays from
//! genesis.
//!
//! ```text
//! "PQBS" | version u16 | height u64 | tip_hash [32] | open u8
//! candidates u32 | (id u32 | str | vote_count u64)*
//! voters u32     | (address [20] | 5 x str | digest [32] | signer [32]
//!                   | signature [sig_len] | quality f64 | 512 x f32
//!                   | flags u8 | block_index u64)*
//! events u32     | (kind u8 | address [20] | str | block_index u64)*
//! checksum [32]  SHA-256 of everything before it
//! ```
//! `str` is `u16 length | utf8`. Integers are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Event, EventKind, Registry, RegistryError, VoterRecord};
use crate::biometric::{FaceEmbedding, SignedEmbedding, EMBEDDING_DIM};
use crate::ledger::{Address, PersonalInfo};
use crate::sigscheme::{decode_signature, Profile};

const MAGIC: &[u8; 4] = b"PQBS";
const VERSION: u16 = 1;

/// Registry state as of the block at `height - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub height: u64,
    pub tip_hash: [u8; 32],
    pub registry: Registry,
}

fn bad(what: &str) -> RegistryError {
    RegistryError::Snapshot(what.to_string())
}

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RegistryError> {
        if self.0.len() < n {
            return Err(bad("truncated"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], RegistryError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8, RegistryError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, RegistryError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, RegistryError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, RegistryError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn str(&mut self) -> Result<String, RegistryError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("string is not utf-8"))
    }
}

impl Snapshot {
    pub fn to_bytes(&self) -> Vec<u8> {
        let r = &self.registry;
        let mut w = Writer(Vec::new());
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u64(self.height);
        w.bytes(&self.tip_hash);
        w.u8(r.open as u8);

        w.u32(r.candidates.len() as u32);
        for c in r.candidates.values() {
            w.u32(c.candidate_id);
            w.str(&c.display_name);
            w.u64(c.vote_count);
        }

        w.u32(r.voters.len() as u32);
        for v in r.voters.values() {
            w.bytes(&v.address.0);
            let p = &v.personal;
            for f in [&p.full_name, &p.phone, &p.date_of_birth, &p.citizenship_number, &p.address] {
                w.str(f);
            }
            w.bytes(&v.signed_embedding.embedding_digest);
            w.bytes(&v.signed_embedding.signer);
            w.bytes(&v.signed_embedding.signature.encode());
            w.bytes(&v.template.quality_norm().to_le_bytes());
            w.bytes(&v.template.canonical_bytes());
            w.u8(v.is_registered as u8 | (v.has_voted as u8) << 1);
            w.u64(v.block_index);
        }

        w.u32(r.events.len() as u32);
        for e in &r.events {
            w.u8(match e.kind {
                EventKind::VoterRegistered => 0,
                EventKind::CastVote => 1,
            });
            w.bytes(&e.address.0);
            w.str(&e.payload_summary);
            w.u64(e.block_index);
        }

        let checksum = crate::sha256(&w.0);
        w.bytes(&checksum);
        w.0
    }

    pub fn from_bytes(bytes: &[u8], profile: Profile) -> Result<Snapshot, RegistryError> {
        if bytes.len() < 32 {
            return Err(bad("truncated"));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        if crate::sha256(body) != checksum {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader(body);
        if r.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        if r.u16()? != VERSION {
            return Err(bad("unsupported version"));
        }
        let height = r.u64()?;
        let tip_hash = r.array()?;
        let mut registry = Registry::new();

        let open = r.u8()? != 0;
        for _ in 0..r.u32()? {
            let id = r.u32()?;
            let name = r.str()?;
            registry.add_candidate(id, name)?;
            registry.candidates.get_mut(&id).unwrap().vote_count = r.u64()?;
        }
        registry.open = open;

        for _ in 0..r.u32()? {
            let address = Address(r.array()?);
            let personal = PersonalInfo {
                full_name: r.str()?,
                phone: r.str()?,
                date_of_birth: r.str()?,
                citizenship_number: r.str()?,
                address: r.str()?,
            };
            let embedding_digest = r.array()?;
            let signer = r.array()?;
            let signature = decode_signature(r.take(profile.signature_len())?, profile).map_err(|_| bad("signature"))?;
            let quality = f64::from_le_bytes(r.array()?);
            let values = r.take(4 * EMBEDDING_DIM)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
            let template = FaceEmbedding::from_normalized(values.collect(), quality).map_err(|_| bad("template"))?;
            let flags = r.u8()?;
            let block_index = r.u64()?;
            registry.citizenships.insert(personal.citizenship_number.clone(), address);
            registry.voters.insert(
                address,
                VoterRecord {
                    address,
                    personal,
                    signed_embedding: SignedEmbedding { embedding_digest, signature, signer },
                    template,
                    is_registered: flags & 1 != 0,
                    has_voted: flags & 2 != 0,
                    block_index,
                },
            );
        }

        for _ in 0..r.u32()? {
            let kind = match r.u8()? {
                0 => EventKind::VoterRegistered,
                1 => EventKind::CastVote,
                _ => return Err(bad("event kind")),
            };
            registry.events.push(Event { kind, address: Address(r.array()?), payload_summary: r.str()?, block_index: r.u64()? });
        }
        if !r.0.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Snapshot { height, tip_hash, registry })
    }

    /// Writes atomically: temp file, fsync, rename.
    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        let io = |e: std::io::Error| RegistryError::Snapshot(e.to_string());
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    /// `Ok(None)` when no snapshot exists.
    pub fn load(path: &Path, profile: Profile) -> Result<Option<Snapshot>, RegistryError> {
        match fs::read(path) {
            Ok(bytes) => Snapshot::from_bytes(&bytes, profile).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(RegistryError::Snapshot(e.to_string())),
        }
    }
}
