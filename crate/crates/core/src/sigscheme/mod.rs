//! Falcon signatures over NTRU lattices.
//!
//! Key generation and the trapdoor sampler are delegated to the `fn-dsa`
//! backend. Everything a verifier needs (public-key decoding, the
//! hash-to-point map, the compressed signature codec, the NTT-based
//! `s1 = c - s2*h` reconstruction and the norm check) is implemented here,
//! and the signer re-checks every backend signature with that code before
//! returning it.

mod codec;
mod hash;
pub mod keyfile;
pub(crate) mod ntt;
mod params;

use std::fmt;
use std::sync::Arc;

use fn_dsa::{KeyPairGenerator, KeyPairGeneratorStandard, SigningKey, SigningKeyStandard};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;
use zeroize::Zeroizing;

pub use codec::{compress, decode_modq, decompress, encode_modq, MAX_COEFF};
pub use hash::{hash_to_point, hashed_public_key, message_representative, HashPoint};
pub use params::{Profile, MAX_SIGN_ATTEMPTS, MODULUS, SALT_LEN};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SigError {
    #[error("no seed supplied and the system entropy source is unavailable")]
    EntropyUnavailable,
    #[error("could not produce a signature within the norm bound after {attempts} attempts")]
    SigningFailure { attempts: usize },
    #[error("malformed encoding: {0}")]
    MalformedEncoding(&'static str),
    #[error("profile mismatch: key is {key}, signature is {signature}")]
    ProfileMismatch { key: Profile, signature: Profile },
    #[error("salt must be {SALT_LEN} bytes, got {len}")]
    InvalidSalt { len: usize },
}

/// Verification key with its NTT image and hashed form cached.
#[derive(Clone)]
pub struct PublicKey {
    profile: Profile,
    encoded: Vec<u8>,
    h_ntt: Arc<[u32]>,
    hashed: [u8; 64],
}

impl PublicKey {
    pub fn from_bytes(profile: Profile, bytes: &[u8]) -> Result<Self, SigError> {
        if bytes.len() != profile.public_key_len() {
            return Err(SigError::MalformedEncoding("public key length"));
        }
        if bytes[0] != profile.public_key_header() {
            return Err(SigError::MalformedEncoding("public key header"));
        }
        // the encoded key already carries h in NTT representation
        let h = decode_modq(&bytes[1..], profile.degree()).ok_or(SigError::MalformedEncoding("public key coefficients"))?;
        let h_ntt: Vec<u32> = h.into_iter().map(u32::from).collect();
        Ok(PublicKey { profile, encoded: bytes.to_vec(), h_ntt: h_ntt.into(), hashed: hashed_public_key(bytes) })
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.encoded
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.encoded)
    }

    /// SHA-256 of the encoded key, used as a compact key reference.
    pub fn fingerprint(&self) -> [u8; 32] {
        crate::sha256(&self.encoded)
    }
}

impl PartialEq for PublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.profile == other.profile && self.encoded == other.encoded
    }
}

impl Eq for PublicKey {}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}, {}..)", self.profile, hex::encode(&self.encoded[..8]))
    }
}

/// Encoded signing key. Never serialized outside an encrypted key file.
#[derive(Clone)]
pub struct SecretKey {
    profile: Profile,
    encoded: Zeroizing<Vec<u8>>,
    public: PublicKey,
}

impl SecretKey {
    pub fn from_bytes(profile: Profile, bytes: &[u8]) -> Result<Self, SigError> {
        if bytes.len() != profile.secret_key_len() {
            return Err(SigError::MalformedEncoding("secret key length"));
        }
        let sk = SigningKeyStandard::decode(bytes).ok_or(SigError::MalformedEncoding("secret key"))?;
        if sk.get_logn() != profile.logn() {
            return Err(SigError::MalformedEncoding("secret key degree"));
        }
        let mut vk = vec![0u8; profile.public_key_len()];
        sk.to_verifying_key(&mut vk);
        Ok(SecretKey { profile, encoded: Zeroizing::new(bytes.to_vec()), public: PublicKey::from_bytes(profile, &vk)? })
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub(crate) fn expose_bytes(&self) -> &[u8] {
        &self.encoded
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({}, <redacted>)", self.profile)
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    secret: SecretKey,
}

impl KeyPair {
    pub fn profile(&self) -> Profile {
        self.secret.profile
    }

    pub fn public(&self) -> &PublicKey {
        &self.secret.public
    }

    pub fn secret(&self) -> &SecretKey {
        &self.secret
    }

    pub fn from_secret(secret: SecretKey) -> Self {
        KeyPair { secret }
    }
}

/// Salted signature: the salt and the short vector `s2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    profile: Profile,
    salt: [u8; SALT_LEN],
    s2: Vec<i16>,
}

impl Signature {
    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn salt(&self) -> &[u8; SALT_LEN] {
        &self.salt
    }

    pub fn short_vector(&self) -> &[i16] {
        &self.s2
    }

    /// Fixed-length encoding: header byte, salt, compressed `s2`, zero padding.
    pub fn encode(&self) -> Vec<u8> {
        encode_signature(self)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.encode())
    }
}

pub fn encode_signature(sig: &Signature) -> Vec<u8> {
    let len = sig.profile.signature_len();
    let mut out = Vec::with_capacity(len);
    out.push(sig.profile.signature_header());
    out.extend_from_slice(&sig.salt);
    // s2 came out of a successful decode or the backend, so it always fits
    let body = compress(&sig.s2, len - 1 - SALT_LEN).expect("signature vector fits its encoding");
    out.extend_from_slice(&body);
    out
}

pub fn decode_signature(bytes: &[u8], profile: Profile) -> Result<Signature, SigError> {
    if bytes.len() != profile.signature_len() {
        return Err(SigError::MalformedEncoding("signature length"));
    }
    if bytes[0] != profile.signature_header() {
        return Err(SigError::MalformedEncoding("signature header"));
    }
    let mut salt = [0u8; SALT_LEN];
    salt.copy_from_slice(&bytes[1..1 + SALT_LEN]);
    let s2 = decompress(&bytes[1 + SALT_LEN..], profile.degree()).ok_or(SigError::MalformedEncoding("compressed signature vector"))?;
    Ok(Signature { profile, salt, s2 })
}

/// Generates a keypair. With a seed the result is a pure function of
/// `(profile, seed)`; without one the system entropy source is used.
pub fn generate_keypair(profile: Profile, seed: Option<[u8; 32]>) -> Result<KeyPair, SigError> {
    let seed = match seed {
        Some(s) => s,
        None => {
            let mut s = [0u8; 32];
            rand::rngs::OsRng.try_fill_bytes(&mut s).map_err(|_| SigError::EntropyUnavailable)?;
            s
        }
    };
    let mut rng = ChaCha20Rng::from_seed(seed);
    let logn = profile.logn();
    let mut kg = Box::<KeyPairGeneratorStandard>::default();
    let mut sk = Zeroizing::new(vec![0u8; profile.secret_key_len()]);
    let mut vk = vec![0u8; profile.public_key_len()];
    kg.keygen(logn, &mut rng, &mut sk, &mut vk);
    let secret = SecretKey::from_bytes(profile, &sk)?;
    debug_assert_eq!(secret.public.as_bytes(), &vk[..]);
    Ok(KeyPair { secret })
}

/// Signs `message` with fresh randomness from the thread-local CSPRNG.
pub fn sign(secret: &SecretKey, message: &[u8]) -> Result<Signature, SigError> {
    sign_with_rng(secret, message, &mut rand::thread_rng())
}

pub fn sign_with_rng<R: CryptoRng + RngCore>(secret: &SecretKey, message: &[u8], rng: &mut R) -> Result<Signature, SigError> {
    let profile = secret.profile;
    let mut sk = SigningKeyStandard::decode(&secret.encoded).ok_or(SigError::MalformedEncoding("secret key"))?;
    let mut buf = vec![0u8; profile.signature_len()];
    for _ in 0..MAX_SIGN_ATTEMPTS {
        if sk.sign(rng, &fn_dsa::DOMAIN_NONE, &fn_dsa::HASH_ID_RAW, message, &mut buf).is_none() {
            continue;
        }
        let Ok(sig) = decode_signature(&buf, profile) else {
            continue;
        };
        if squared_norm(&secret.public, message, &sig)? <= profile.norm_bound() {
            return Ok(sig);
        }
    }
    Err(SigError::SigningFailure { attempts: MAX_SIGN_ATTEMPTS })
}

/// Squared L2 norm of `(s1, s2)` where `s1 = H(r, m) - s2*h mod q`, both
/// taken with centered coefficients.
pub fn squared_norm(public: &PublicKey, message: &[u8], sig: &Signature) -> Result<u64, SigError> {
    if public.profile != sig.profile {
        return Err(SigError::ProfileMismatch { key: public.profile, signature: sig.profile });
    }
    let mu = message_representative(&public.hashed, message);
    let c = hash_to_point(&sig.salt, &mu, sig.profile)?;

    let mut t: Vec<u32> = sig.s2.iter().map(|&v| ntt::reduce_signed(v as i32)).collect();
    ntt::forward(&mut t);
    ntt::pointwise(&mut t, &public.h_ntt);
    ntt::inverse(&mut t);

    let mut norm: u64 = sig.s2.iter().map(|&v| (v as i64 * v as i64) as u64).sum();
    for (&ci, &ti) in c.coefficients().iter().zip(&t) {
        let s1 = ntt::center((ci as u32 + MODULUS - ti) % MODULUS) as i64;
        norm += (s1 * s1) as u64;
    }
    Ok(norm)
}

/// True iff `sig` is a valid signature of `message` under `public`.
pub fn verify(public: &PublicKey, message: &[u8], sig: &Signature) -> Result<bool, SigError> {
    Ok(squared_norm(public, message, sig)? <= public.profile.norm_bound())
}

/// Decodes then verifies; wrong-length or undecodable input is an error,
/// not a clean `false`.
pub fn verify_encoded(public: &PublicKey, message: &[u8], sig: &[u8]) -> Result<bool, SigError> {
    let sig = decode_signature(sig, public.profile)?;
    verify(public, message, &sig)
}
