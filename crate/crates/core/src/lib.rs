//! Post-quantum signed biometric voting node.

pub mod bench;
pub mod biometric;
pub mod ledger;
pub mod protocol;
pub mod registry;
pub mod service;
pub mod sigscheme;

use sha2::{Digest, Sha256};

/// SHA-256 of `data`.
pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}
