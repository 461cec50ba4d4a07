use shake::{ExtendableOutput, Shake256, Update, XofReader};

use super::params::{Profile, MODULUS, SALT_LEN};
use super::SigError;

/// Target point of a signature: `n` residues modulo q.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashPoint {
    coefficients: Vec<u16>,
}

impl HashPoint {
    pub fn coefficients(&self) -> &[u16] {
        &self.coefficients
    }

    pub fn into_coefficients(self) -> Vec<u16> {
        self.coefficients
    }
}

// Largest multiple of q below 2^16; 16-bit samples at or above it are rejected.
const REJECTION_LIMIT: u32 = 5 * MODULUS;

/// Maps `(salt, message)` to a ring element with uniform coefficients by
/// rejection sampling 16-bit little-endian words from SHAKE256.
pub fn hash_to_point(salt: &[u8], message: &[u8], profile: Profile) -> Result<HashPoint, SigError> {
    if salt.len() != SALT_LEN {
        return Err(SigError::InvalidSalt { len: salt.len() });
    }
    let mut xof = Shake256::default();
    xof.update(salt);
    xof.update(message);
    let mut reader = xof.finalize_xof();

    let n = profile.degree();
    let mut coefficients = Vec::with_capacity(n);
    let mut buf = [0u8; 136];
    while coefficients.len() < n {
        reader.read(&mut buf);
        for pair in buf.chunks_exact(2) {
            let w = u16::from_le_bytes([pair[0], pair[1]]) as u32;
            if w < REJECTION_LIMIT {
                coefficients.push((w % MODULUS) as u16);
                if coefficients.len() == n {
                    break;
                }
            }
        }
    }
    Ok(HashPoint { coefficients })
}

/// 64-byte SHAKE256 fingerprint of an encoded public key; binds signatures
/// to the key they were produced for.
pub fn hashed_public_key(public: &[u8]) -> [u8; 64] {
    let mut xof = Shake256::default();
    xof.update(public);
    let mut out = [0u8; 64];
    xof.finalize_xof().read(&mut out);
    out
}

/// Message representative hashed together with the salt. Uses the
/// no-prehash, empty-context framing: `hpk || 0x00 || 0x00 || message`.
pub fn message_representative(hashed_public: &[u8; 64], message: &[u8]) -> [u8; 64] {
    let mut xof = Shake256::default();
    xof.update(hashed_public);
    xof.update(&[0u8, 0u8]);
    xof.update(message);
    let mut out = [0u8; 64];
    xof.finalize_xof().read(&mut out);
    out
}
