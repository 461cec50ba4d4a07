//! Encrypted at-rest storage for the authority signing key.
//!
//! Layout: `"PQBK" ‖ profile ‖ u32 len ‖ sealed secret ‖ u32 len ‖ public key`,
//! lengths little-endian. The sealed secret is
//! `kdf salt (16) ‖ rounds u32 ‖ nonce (12) ‖ ChaCha20-Poly1305 ciphertext`,
//! with everything outside the sealed blob bound as associated data.

use std::fs::OpenOptions;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::RngCore;
use thiserror::Error;
use zeroize::Zeroizing;

use super::{generate_keypair, KeyPair, Profile, PublicKey, SecretKey, SigError};

const MAGIC: &[u8; 4] = b"PQBK";
const KDF_SALT_LEN: usize = 16;
const NONCE_LEN: usize = 12;
pub const DEFAULT_KDF_ROUNDS: u32 = 200_000;

#[derive(Debug, Error)]
pub enum KeyFileError {
    #[error("key file already exists: {0}")]
    AlreadyExists(PathBuf),
    #[error("key file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("key file is malformed: {0}")]
    Malformed(&'static str),
    #[error("wrong passphrase or corrupted key file")]
    Decryption,
    #[error(transparent)]
    Key(#[from] SigError),
}

fn derive_key(passphrase: &[u8], salt: &[u8], rounds: u32) -> Zeroizing<[u8; 32]> {
    let mut key = Zeroizing::new([0u8; 32]);
    pbkdf2::pbkdf2_hmac::<sha2::Sha256>(passphrase, salt, rounds, key.as_mut());
    key
}

fn associated_data(profile: Profile, public: &[u8]) -> Vec<u8> {
    let mut aad = Vec::with_capacity(5 + public.len());
    aad.extend_from_slice(MAGIC);
    aad.push(profile.logn() as u8);
    aad.extend_from_slice(public);
    aad
}

/// Serializes `keys` sealed under `passphrase`.
pub fn seal(keys: &KeyPair, passphrase: &[u8], rounds: u32) -> Result<Vec<u8>, KeyFileError> {
    let profile = keys.profile();
    let public = keys.public().as_bytes();
    let mut salt = [0u8; KDF_SALT_LEN];
    let mut nonce = [0u8; NONCE_LEN];
    rand::rngs::OsRng.try_fill_bytes(&mut salt).map_err(|_| SigError::EntropyUnavailable)?;
    rand::rngs::OsRng.try_fill_bytes(&mut nonce).map_err(|_| SigError::EntropyUnavailable)?;

    let key = derive_key(passphrase, &salt, rounds);
    let cipher = ChaCha20Poly1305::new(&Key::from(*key));
    let aad = associated_data(profile, public);
    let ct = cipher
        .encrypt(&Nonce::from(nonce), Payload { msg: keys.secret().expose_bytes(), aad: &aad })
        .map_err(|_| KeyFileError::Malformed("encryption failed"))?;

    let mut sealed = Vec::with_capacity(KDF_SALT_LEN + 4 + NONCE_LEN + ct.len());
    sealed.extend_from_slice(&salt);
    sealed.extend_from_slice(&rounds.to_le_bytes());
    sealed.extend_from_slice(&nonce);
    sealed.extend_from_slice(&ct);

    let mut out = Vec::with_capacity(4 + 1 + 8 + sealed.len() + public.len());
    out.extend_from_slice(MAGIC);
    out.push(profile.logn() as u8);
    out.extend_from_slice(&(sealed.len() as u32).to_le_bytes());
    out.extend_from_slice(&sealed);
    out.extend_from_slice(&(public.len() as u32).to_le_bytes());
    out.extend_from_slice(public);
    Ok(out)
}

fn take<'a>(src: &mut &'a [u8], n: usize) -> Result<&'a [u8], KeyFileError> {
    if src.len() < n {
        return Err(KeyFileError::Malformed("truncated"));
    }
    let (head, tail) = src.split_at(n);
    *src = tail;
    Ok(head)
}

fn take_u32(src: &mut &[u8]) -> Result<u32, KeyFileError> {
    Ok(u32::from_le_bytes(take(src, 4)?.try_into().unwrap()))
}

/// Reads only the public half; no passphrase needed.
pub fn read_public(bytes: &[u8]) -> Result<PublicKey, KeyFileError> {
    let (profile, _, public) = split(bytes)?;
    Ok(PublicKey::from_bytes(profile, public)?)
}

fn split(bytes: &[u8]) -> Result<(Profile, &[u8], &[u8]), KeyFileError> {
    let mut src = bytes;
    if take(&mut src, 4)? != MAGIC {
        return Err(KeyFileError::Malformed("bad magic"));
    }
    let profile = Profile::from_logn(take(&mut src, 1)?[0] as u32).ok_or(KeyFileError::Malformed("unknown profile"))?;
    let sealed_len = take_u32(&mut src)? as usize;
    let sealed = take(&mut src, sealed_len)?;
    let public_len = take_u32(&mut src)? as usize;
    let public = take(&mut src, public_len)?;
    if !src.is_empty() {
        return Err(KeyFileError::Malformed("trailing bytes"));
    }
    Ok((profile, sealed, public))
}

/// Decrypts a sealed key file and checks the secret matches the stored public key.
pub fn open(bytes: &[u8], passphrase: &[u8]) -> Result<KeyPair, KeyFileError> {
    let (profile, sealed, public) = split(bytes)?;
    let mut src = sealed;
    let salt = take(&mut src, KDF_SALT_LEN)?;
    let rounds = take_u32(&mut src)?;
    if rounds == 0 {
        return Err(KeyFileError::Malformed("zero kdf rounds"));
    }
    let nonce: [u8; NONCE_LEN] = take(&mut src, NONCE_LEN)?.try_into().unwrap();
    let key = derive_key(passphrase, salt, rounds);
    let cipher = ChaCha20Poly1305::new(&Key::from(*key));
    let aad = associated_data(profile, public);
    let secret =
        Zeroizing::new(cipher.decrypt(&Nonce::from(nonce), Payload { msg: src, aad: &aad }).map_err(|_| KeyFileError::Decryption)?);
    let secret = SecretKey::from_bytes(profile, &secret)?;
    if secret.public_key().as_bytes() != public {
        return Err(KeyFileError::Malformed("public key does not match secret"));
    }
    Ok(KeyPair::from_secret(secret))
}

/// Source of the node's authority keypair.
pub trait KeyStore: Send + Sync {
    fn load(&self) -> Result<KeyPair, KeyFileError>;
}

/// Passphrase-protected key file on local disk.
pub struct FileKeyStore {
    path: PathBuf,
    passphrase: Zeroizing<String>,
}

impl FileKeyStore {
    pub fn new(path: impl Into<PathBuf>, passphrase: impl Into<String>) -> Self {
        FileKeyStore { path: path.into(), passphrase: Zeroizing::new(passphrase.into()) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn exists(&self) -> bool {
        self.path.exists()
    }

    /// Generates a fresh keypair and writes it; fails if the file exists.
    pub fn create(&self, profile: Profile, seed: Option<[u8; 32]>, rounds: u32) -> Result<KeyPair, KeyFileError> {
        let keys = generate_keypair(profile, seed)?;
        let bytes = seal(&keys, self.passphrase.as_bytes(), rounds)?;
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::AlreadyExists => return Err(KeyFileError::AlreadyExists(self.path.clone())),
            Err(e) => return Err(e.into()),
        };
        file.write_all(&bytes)?;
        file.sync_all()?;
        Ok(keys)
    }
}

impl KeyStore for FileKeyStore {
    fn load(&self) -> Result<KeyPair, KeyFileError> {
        let bytes = std::fs::read(&self.path)?;
        open(&bytes, self.passphrase.as_bytes())
    }
}
