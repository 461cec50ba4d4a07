//! C ABI over the signature scheme, embedding helpers, key files and
//! ledger verification.
//!
//! Every function returns a [`PqbStatus`]. Outputs go through caller
//! pointers and are written only on success. The signing key never
//! crosses the boundary: callers hold it behind an opaque [`PqbKeyPair`].
//! The message for the most recent failure on the calling thread is
//! available from [`pqb_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use pqballot::biometric::{cosine_similarity, normalize};
use pqballot::ledger::{split_records, verify_records, Block, ChainReport, GasModel, LedgerError};
use pqballot::sigscheme::keyfile::{FileKeyStore, KeyStore};
use pqballot::sigscheme::{decode_signature, generate_keypair, sign, verify, KeyPair, Profile, PublicKey};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    /// The output buffer is shorter than the value; the required length
    /// was written to the length out-pointer.
    BufferTooSmall = 3,
    MalformedEncoding = 4,
    KeyFile = 5,
    Io = 6,
    CryptoFailure = 7,
    Panic = 8,
}

/// Parameter set selector.
pub const PQB_PROFILE_F512: u32 = 512;
pub const PQB_PROFILE_F1024: u32 = 1024;

/// Opaque authority or voter keypair.
pub struct PqbKeyPair {
    keys: KeyPair,
}

/// Outcome of a full ledger verification.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PqbChainReport {
    pub valid: bool,
    pub length: u64,
    /// Index of the first failing block, or -1 when the chain is valid.
    pub first_bad_index: i64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(PqbStatus, String);

impl Failure {
    fn new(status: PqbStatus, message: impl Into<String>) -> Self {
        Failure(status, message.into())
    }
}

/// Runs `f`, records its failure message and turns panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PqbStatus {
    let (status, message) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (PqbStatus::Ok, String::new()),
        Ok(Err(Failure(status, message))) => (status, message),
        Err(_) => (PqbStatus::Panic, "internal panic".to_string()),
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
    status
}

fn profile(code: u32) -> Result<Profile, Failure> {
    match code {
        PQB_PROFILE_F512 => Ok(Profile::F512),
        PQB_PROFILE_F1024 => Ok(Profile::F1024),
        other => Err(Failure::new(PqbStatus::InvalidArgument, format!("unknown profile {other}"))),
    }
}

/// # Safety
/// `ptr` must be null or point to `len` readable bytes.
unsafe fn bytes<'a>(ptr: *const u8, len: usize, name: &str) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::new(PqbStatus::NullArgument, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn text<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure::new(PqbStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| Failure::new(PqbStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

fn non_null<T>(ptr: *mut T, name: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        Err(Failure::new(PqbStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Copies `value` into `out` if it fits; always reports the length.
///
/// # Safety
/// `out` must be null or point to `capacity` writable bytes; `out_len`
/// must be writable.
unsafe fn write_out(value: &[u8], out: *mut u8, capacity: usize, out_len: *mut usize) -> Result<(), Failure> {
    non_null(out_len, "out_len")?;
    *out_len = value.len();
    if capacity < value.len() {
        return Err(Failure::new(PqbStatus::BufferTooSmall, format!("need {} bytes, have {capacity}", value.len())));
    }
    non_null(out, "out")?;
    std::ptr::copy_nonoverlapping(value.as_ptr(), out, value.len());
    Ok(())
}

fn public_key(profile_code: u32, pk: &[u8]) -> Result<PublicKey, Failure> {
    PublicKey::from_bytes(profile(profile_code)?, pk).map_err(|e| Failure::new(PqbStatus::MalformedEncoding, e.to_string()))
}

/// Static description of a status code. Never null.
#[no_mangle]
pub extern "C" fn pqb_status_str(status: PqbStatus) -> *const c_char {
    let s: &'static CStr = match status {
        PqbStatus::Ok => c"ok",
        PqbStatus::NullArgument => c"a required pointer argument is null",
        PqbStatus::InvalidArgument => c"an argument is out of range",
        PqbStatus::BufferTooSmall => c"output buffer too small",
        PqbStatus::MalformedEncoding => c"malformed key or signature encoding",
        PqbStatus::KeyFile => c"key file could not be opened",
        PqbStatus::Io => c"i/o failure",
        PqbStatus::CryptoFailure => c"cryptographic operation failed",
        PqbStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Copies the calling thread's last failure message, NUL-terminated and
/// truncated to fit, into `buf`. Returns the untruncated length.
///
/// # Safety
/// `buf` must be null or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pqb_last_error(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Public key length in bytes for `profile`, or 0 if unknown.
#[no_mangle]
pub extern "C" fn pqb_public_key_len(profile_code: u32) -> usize {
    profile(profile_code).map(|p| p.public_key_len()).unwrap_or(0)
}

/// Encoded signature length in bytes for `profile`, or 0 if unknown.
#[no_mangle]
pub extern "C" fn pqb_signature_len(profile_code: u32) -> usize {
    profile(profile_code).map(|p| p.signature_len()).unwrap_or(0)
}

/// Generates a keypair. With a non-null `seed` (32 bytes) the result is
/// deterministic. Free with [`pqb_keypair_free`].
///
/// # Safety
/// `seed` must be null or point to 32 readable bytes; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pqb_keypair_generate(profile_code: u32, seed: *const u8, out: *mut *mut PqbKeyPair) -> PqbStatus {
    guard(|| {
        non_null(out, "out")?;
        let seed = if seed.is_null() { None } else { Some(*(seed as *const [u8; 32])) };
        let keys = generate_keypair(profile(profile_code)?, seed).map_err(|e| Failure::new(PqbStatus::CryptoFailure, e.to_string()))?;
        *out = Box::into_raw(Box::new(PqbKeyPair { keys }));
        Ok(())
    })
}

/// Opens a passphrase-protected key file. Free with [`pqb_keypair_free`].
///
/// # Safety
/// `path` and `passphrase` must be NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pqb_keypair_load(path: *const c_char, passphrase: *const c_char, out: *mut *mut PqbKeyPair) -> PqbStatus {
    guard(|| {
        non_null(out, "out")?;
        let store = FileKeyStore::new(PathBuf::from(text(path, "path")?), text(passphrase, "passphrase")?);
        let keys = store.load().map_err(|e| Failure::new(PqbStatus::KeyFile, e.to_string()))?;
        *out = Box::into_raw(Box::new(PqbKeyPair { keys }));
        Ok(())
    })
}

/// Releases a keypair; the secret is zeroized. Null is a no-op.
///
/// # Safety
/// `keys` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pqb_keypair_free(keys: *mut PqbKeyPair) {
    if !keys.is_null() {
        drop(Box::from_raw(keys));
    }
}

/// Profile code of a keypair, or 0 for null.
///
/// # Safety
/// `keys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pqb_keypair_profile(keys: *const PqbKeyPair) -> u32 {
    match keys.as_ref().map(|k| k.keys.profile()) {
        Some(Profile::F512) => PQB_PROFILE_F512,
        Some(Profile::F1024) => PQB_PROFILE_F1024,
        None => 0,
    }
}

/// Writes the encoded public key.
///
/// # Safety
/// `keys` must be a live handle; `out` must hold `capacity` bytes;
/// `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pqb_keypair_public_key(keys: *const PqbKeyPair, out: *mut u8, capacity: usize, out_len: *mut usize) -> PqbStatus {
    guard(|| {
        let keys = keys.as_ref().ok_or_else(|| Failure::new(PqbStatus::NullArgument, "keys is null"))?;
        write_out(keys.keys.public().as_bytes(), out, capacity, out_len)
    })
}

/// Signs `message` and writes the fixed-length encoded signature.
///
/// # Safety
/// `keys` must be a live handle; `message` must hold `message_len`
/// bytes; `out` must hold `capacity` bytes; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pqb_sign(
    keys: *const PqbKeyPair,
    message: *const u8,
    message_len: usize,
    out: *mut u8,
    capacity: usize,
    out_len: *mut usize,
) -> PqbStatus {
    guard(|| {
        let keys = keys.as_ref().ok_or_else(|| Failure::new(PqbStatus::NullArgument, "keys is null"))?;
        let message = bytes(message, message_len, "message")?;
        let sig = sign(keys.keys.secret(), message).map_err(|e| Failure::new(PqbStatus::CryptoFailure, e.to_string()))?;
        write_out(&sig.encode(), out, capacity, out_len)
    })
}

/// Sets `*valid` to whether `signature` verifies over `message`. A
/// well-formed but wrong signature is `Ok` with `*valid = false`.
///
/// # Safety
/// Each pointer must hold its stated length; `valid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pqb_verify(
    profile_code: u32,
    public_key_bytes: *const u8,
    public_key_len: usize,
    message: *const u8,
    message_len: usize,
    signature: *const u8,
    signature_len: usize,
    valid: *mut bool,
) -> PqbStatus {
    guard(|| {
        non_null(valid, "valid")?;
        let pk = public_key(profile_code, bytes(public_key_bytes, public_key_len, "public_key")?)?;
        let message = bytes(message, message_len, "message")?;
        let sig = decode_signature(bytes(signature, signature_len, "signature")?, pk.profile())
            .map_err(|e| Failure::new(PqbStatus::MalformedEncoding, e.to_string()))?;
        *valid = verify(&pk, message, &sig).map_err(|e| Failure::new(PqbStatus::CryptoFailure, e.to_string()))?;
        Ok(())
    })
}

/// Normalizes a raw embedding and writes its 32-byte digest.
///
/// # Safety
/// `raw` must hold `len` doubles; `digest` must hold 32 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pqb_embedding_digest(raw: *const f64, len: usize, digest: *mut u8) -> PqbStatus {
    guard(|| {
        non_null(digest, "digest")?;
        if raw.is_null() {
            return Err(Failure::new(PqbStatus::NullArgument, "raw is null"));
        }
        let e = normalize(slice::from_raw_parts(raw, len)).map_err(|e| Failure::new(PqbStatus::InvalidArgument, e.to_string()))?;
        std::ptr::copy_nonoverlapping(e.digest().as_ptr(), digest, 32);
        Ok(())
    })
}

/// Cosine similarity of two raw embeddings after normalization.
///
/// # Safety
/// `a` and `b` must each hold `len` doubles; `similarity` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pqb_cosine_similarity(a: *const f64, b: *const f64, len: usize, similarity: *mut f64) -> PqbStatus {
    guard(|| {
        non_null(similarity, "similarity")?;
        if a.is_null() || b.is_null() {
            return Err(Failure::new(PqbStatus::NullArgument, "embedding is null"));
        }
        let invalid = |e: pqballot::biometric::BiometricError| Failure::new(PqbStatus::InvalidArgument, e.to_string());
        let a = normalize(slice::from_raw_parts(a, len)).map_err(invalid)?;
        let b = normalize(slice::from_raw_parts(b, len)).map_err(invalid)?;
        *similarity = cosine_similarity(&a, &b);
        Ok(())
    })
}

/// Verifies a ledger file under the authority public key and the default
/// gas model. The file is only read; a torn tail is ignored, not repaired.
///
/// # Safety
/// `path` must be a NUL-terminated string; `public_key_bytes` must hold
/// `public_key_len` bytes; `report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pqb_verify_chain_file(
    path: *const c_char,
    profile_code: u32,
    public_key_bytes: *const u8,
    public_key_len: usize,
    report: *mut PqbChainReport,
) -> PqbStatus {
    guard(|| {
        non_null(report, "report")?;
        let pk = public_key(profile_code, bytes(public_key_bytes, public_key_len, "public_key")?)?;
        let path = PathBuf::from(text(path, "path")?);
        let data = std::fs::read(&path).map_err(|e| Failure::new(PqbStatus::Io, format!("{}: {e}", path.display())))?;
        let profile = pk.profile();
        let complete = move |b: &[u8]| Block::from_bytes(b, profile).is_ok();
        let r = match split_records(&data, Some(&complete)) {
            Ok((records, _)) => verify_records(&records, &pk, &GasModel::default()),
            Err(LedgerError::CorruptChain { first_bad_index, .. }) => {
                ChainReport { valid: false, length: first_bad_index, first_bad_index: Some(first_bad_index) }
            }
            Err(e) => return Err(Failure::new(PqbStatus::Io, e.to_string())),
        };
        *report = PqbChainReport { valid: r.valid, length: r.length, first_bad_index: r.first_bad_index.map_or(-1, |i| i as i64) };
        Ok(())
    })
}
