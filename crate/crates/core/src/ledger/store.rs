//! Durable record stores. Records are opaque canonical block bytes; the
//! file format is `[u32 big-endian length ‖ bytes]*` with an fsync after
//! every append.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;

use super::LedgerError;

/// Largest record accepted on load. Anything bigger is corruption, not a
/// torn write.
pub const MAX_RECORD_LEN: usize = 1 << 16;

pub trait BlockStore: Send {
    /// All committed records, in order. May repair a torn tail.
    fn load(&mut self) -> Result<Vec<Vec<u8>>, LedgerError>;

    /// Durably appends one record. On error the store holds exactly what it
    /// held before the call, or refuses further appends.
    fn append(&mut self, record: &[u8]) -> Result<(), LedgerError>;
}

/// What [`FileBlockStore::open`] had to repair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Recovery {
    pub truncated_bytes: u64,
}

pub struct FileBlockStore {
    path: PathBuf,
    file: File,
    len: u64,
    poisoned: bool,
    recovery: Recovery,
    /// Recognizes a complete record, to tell a damaged length prefix from a
    /// torn write. The store itself never interprets records.
    looks_complete: Option<Box<RecordCheck>>,
}

/// Recognizes a complete record.
pub type RecordCheck = dyn Fn(&[u8]) -> bool + Send;

impl FileBlockStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().read(true).append(true).create(true).open(&path).map_err(persist)?;
        let len = file.metadata().map_err(persist)?.len();
        Ok(FileBlockStore { path, file, len, poisoned: false, recovery: Recovery::default(), looks_complete: None })
    }

    /// A tail record whose declared length runs past end-of-file is treated
    /// as torn unless `validator` accepts the bytes that are present; in that
    /// case the length prefix itself is damaged and load refuses.
    pub fn with_record_validator(mut self, validator: impl Fn(&[u8]) -> bool + Send + 'static) -> Self {
        self.looks_complete = Some(Box::new(validator));
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn recovery(&self) -> Recovery {
        self.recovery
    }
}

/// Splits a ledger file image into its records without touching the file.
/// Returns the records and the length of the committed prefix; bytes past
/// it are a torn tail. `looks_complete` is as in
/// [`FileBlockStore::with_record_validator`].
pub fn split_records(data: &[u8], looks_complete: Option<&RecordCheck>) -> Result<(Vec<Vec<u8>>, usize), LedgerError> {
    let mut records = Vec::new();
    let mut pos = 0usize;
    while pos < data.len() {
        if data.len() - pos < 4 {
            break;
        }
        let len = u32::from_be_bytes(data[pos..pos + 4].try_into().unwrap()) as usize;
        if len == 0 || len > MAX_RECORD_LEN {
            return Err(LedgerError::CorruptChain { first_bad_index: records.len() as u64, reason: "record length out of range".into() });
        }
        let rest = &data[pos + 4..];
        if rest.len() < len {
            if looks_complete.is_some_and(|ok| ok(rest)) {
                return Err(LedgerError::CorruptChain {
                    first_bad_index: records.len() as u64,
                    reason: "record length prefix damaged".into(),
                });
            }
            break;
        }
        records.push(rest[..len].to_vec());
        pos += 4 + len;
    }
    Ok((records, pos))
}

fn persist(e: std::io::Error) -> LedgerError {
    LedgerError::Persistence(e.to_string())
}

impl BlockStore for FileBlockStore {
    fn load(&mut self) -> Result<Vec<Vec<u8>>, LedgerError> {
        let mut data = Vec::with_capacity(self.len as usize);
        self.file.seek(SeekFrom::Start(0)).map_err(persist)?;
        self.file.read_to_end(&mut data).map_err(persist)?;

        let (records, committed) = split_records(&data, self.looks_complete.as_deref())?;
        let torn_at = (committed < data.len()).then_some(committed);
        if let Some(at) = torn_at {
            self.file.set_len(at as u64).map_err(persist)?;
            self.file.sync_all().map_err(persist)?;
            self.recovery.truncated_bytes = (data.len() - at) as u64;
            self.len = at as u64;
            tracing::warn!(path = %self.path.display(), bytes = data.len() - at, "truncated torn ledger tail");
        }
        Ok(records)
    }

    fn append(&mut self, record: &[u8]) -> Result<(), LedgerError> {
        if self.poisoned {
            return Err(LedgerError::Persistence("ledger file is in an unknown state after a failed rollback".into()));
        }
        let mut buf = Vec::with_capacity(4 + record.len());
        buf.extend_from_slice(&(record.len() as u32).to_be_bytes());
        buf.extend_from_slice(record);
        let result = self.file.write_all(&buf).and_then(|_| self.file.sync_data());
        match result {
            Ok(()) => {
                self.len += buf.len() as u64;
                Ok(())
            }
            Err(e) => {
                if self.file.set_len(self.len).and_then(|_| self.file.sync_all()).is_err() {
                    self.poisoned = true;
                }
                Err(persist(e))
            }
        }
    }
}

#[derive(Debug, Default)]
struct MemoryInner {
    records: Vec<Vec<u8>>,
    fail_after: Option<usize>,
}

/// In-memory store with fault injection. Clones share the same records, so
/// a test can keep one handle while the ledger owns another.
#[derive(Debug, Clone, Default)]
pub struct MemoryBlockStore {
    inner: Arc<Mutex<MemoryInner>>,
}

impl MemoryBlockStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_records(records: Vec<Vec<u8>>) -> Self {
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

    pub fn records(&self) -> Vec<Vec<u8>> {
        self.inner.lock().records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl BlockStore for MemoryBlockStore {
    fn load(&mut self) -> Result<Vec<Vec<u8>>, LedgerError> {
        Ok(self.records())
    }

    fn append(&mut self, record: &[u8]) -> Result<(), LedgerError> {
        let mut inner = self.inner.lock();
        match inner.fail_after {
            Some(0) => return Err(LedgerError::Persistence("injected append failure".into())),
            Some(ref mut n) => *n -= 1,
            None => {}
        }
        inner.records.push(record.to_vec());
        Ok(())
    }
}
