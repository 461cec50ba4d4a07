//! Off-chain template log. Templates are written (and synced) before the
//! registration block that commits to their digest, so every on-chain
//! registration has its template on disk. A template without a block is an
//! orphan from an interrupted commit and is ignored on replay.
//!
//! Record layout, fixed size: `digest [32] ‖ quality_norm f64 ‖ 512 x f32`,
//! little-endian.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;

use super::RegistryError;
use crate::biometric::{FaceEmbedding, EMBEDDING_DIM};

pub const TEMPLATE_RECORD_LEN: usize = 32 + 8 + 4 * EMBEDDING_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateRecord {
    pub digest: [u8; 32],
    pub embedding: FaceEmbedding,
}

impl TemplateRecord {
    pub fn new(embedding: FaceEmbedding) -> Self {
        TemplateRecord { digest: embedding.digest(), embedding }
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TEMPLATE_RECORD_LEN);
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.embedding.quality_norm().to_le_bytes());
        out.extend(self.embedding.canonical_bytes());
        out
    }

    fn from_bytes(b: &[u8]) -> Option<Self> {
        let digest: [u8; 32] = b[..32].try_into().ok()?;
        let quality = f64::from_le_bytes(b[32..40].try_into().ok()?);
        let values = b[40..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let embedding = FaceEmbedding::from_normalized(values, quality).ok()?;
        // a record whose digest disagrees with its values is damaged
        (embedding.digest() == digest).then_some(TemplateRecord { digest, embedding })
    }
}

pub trait TemplateStore: Send {
    fn load(&mut self) -> Result<Vec<TemplateRecord>, RegistryError>;
    fn append(&mut self, record: &TemplateRecord) -> Result<(), RegistryError>;
}

/// Collects records into a digest-keyed map.
pub fn index(records: Vec<TemplateRecord>) -> HashMap<[u8; 32], FaceEmbedding> {
    records.into_iter().map(|r| (r.digest, r.embedding)).collect()
}

fn store_err(e: std::io::Error) -> RegistryError {
    RegistryError::TemplateStore(e.to_string())
}

pub struct FileTemplateStore {
    file: File,
    len: u64,
}

impl FileTemplateStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let file = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(store_err)?;
        let len = file.metadata().map_err(store_err)?.len();
        Ok(FileTemplateStore { file, len })
    }
}

impl TemplateStore for FileTemplateStore {
    /// Truncates a partial trailing record; skips damaged whole records,
    /// which replay then reports as missing if a block needs them.
    fn load(&mut self) -> Result<Vec<TemplateRecord>, RegistryError> {
        let mut data = Vec::new();
        self.file.seek(SeekFrom::Start(0)).map_err(store_err)?;
        self.file.read_to_end(&mut data).map_err(store_err)?;
        let whole = data.len() - data.len() % TEMPLATE_RECORD_LEN;
        if whole != data.len() {
            self.file.set_len(whole as u64).map_err(store_err)?;
            self.file.sync_all().map_err(store_err)?;
            self.len = whole as u64;
        }
        Ok(data[..whole].chunks_exact(TEMPLATE_RECORD_LEN).filter_map(TemplateRecord::from_bytes).collect())
    }

    fn append(&mut self, record: &TemplateRecord) -> Result<(), RegistryError> {
        let bytes = record.to_bytes();
        match self.file.write_all(&bytes).and_then(|_| self.file.sync_data()) {
            Ok(()) => {
                self.len += bytes.len() as u64;
                Ok(())
            }
            Err(e) => {
                let _ = self.file.set_len(self.len);
                Err(store_err(e))
            }
        }
    }
}

#[derive(Debug, Default)]
struct MemoryInner {
    records: Vec<TemplateRecord>,
    fail_after: Option<usize>,
}

/// Shared in-memory template log with fault injection.
#[derive(Debug, Clone, Default)]
pub struct MemoryTemplateStore {
    inner: Arc<Mutex<MemoryInner>>,
}

impl MemoryTemplateStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_records(records: Vec<TemplateRecord>) -> Self {
        let store = Self::default();
        store.inner.lock().records = records;
        store
    }

    /// Lets `n` more appends succeed, then fails every append.
    pub fn fail_after(&self, n: usize) {
        self.inner.lock().fail_after = Some(n);
    }

    pub fn heal(&self) {
        self.inner.lock().fail_after = None;
    }

    pub fn records(&self) -> Vec<TemplateRecord> {
        self.inner.lock().records.clone()
    }
}

impl TemplateStore for MemoryTemplateStore {
    fn load(&mut self) -> Result<Vec<TemplateRecord>, RegistryError> {
        Ok(self.records())
    }

    fn append(&mut self, record: &TemplateRecord) -> Result<(), RegistryError> {
        let mut inner = self.inner.lock();
        match inner.fail_after {
            Some(0) => return Err(RegistryError::TemplateStore("injected append failure".into())),
            Some(ref mut n) => *n -= 1,
            None => {}
        }
        inner.records.push(record.clone());
        Ok(())
    }
}
