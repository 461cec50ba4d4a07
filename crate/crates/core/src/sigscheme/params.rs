use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Shared modulus of both parameter sets.
pub const MODULUS: u32 = 12289;

/// Length of the per-signature salt.
pub const SALT_LEN: usize = 40;

/// Maximum number of sampling attempts before signing gives up.
pub const MAX_SIGN_ATTEMPTS: usize = 64;

/// Falcon parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Profile {
    #[serde(rename = "F512")]
    F512,
    #[serde(rename = "F1024")]
    F1024,
}

impl Profile {
    pub const fn logn(self) -> u32 {
        match self {
            Profile::F512 => 9,
            Profile::F1024 => 10,
        }
    }

    /// Ring degree `n` of `Z[X]/(X^n + 1)`.
    pub const fn degree(self) -> usize {
        1 << self.logn()
    }

    pub const fn modulus(self) -> u32 {
        MODULUS
    }

    /// Squared L2 acceptance bound on `(s1, s2)`.
    pub const fn norm_bound(self) -> u64 {
        match self {
            Profile::F512 => 34_034_726,
            Profile::F1024 => 70_265_242,
        }
    }

    pub const fn salt_len(self) -> usize {
        SALT_LEN
    }

    /// Header byte followed by `n` coefficients packed on 14 bits.
    pub const fn public_key_len(self) -> usize {
        1 + (14 * self.degree()) / 8
    }

    /// Fixed padded signature length.
    pub const fn signature_len(self) -> usize {
        match self {
            Profile::F512 => 666,
            Profile::F1024 => 1280,
        }
    }

    pub const fn secret_key_len(self) -> usize {
        fn_dsa::sign_key_size(self.logn())
    }

    /// First byte of every encoded signature under this profile.
    pub const fn signature_header(self) -> u8 {
        0x30 + self.logn() as u8
    }

    /// First byte of every encoded public key under this profile.
    pub const fn public_key_header(self) -> u8 {
        self.logn() as u8
    }

    pub fn from_logn(logn: u32) -> Option<Self> {
        match logn {
            9 => Some(Profile::F512),
            10 => Some(Profile::F1024),
            _ => None,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Profile::F512 => "F512",
            Profile::F1024 => "F1024",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "F512" | "FALCON512" | "FALCON-512" => Ok(Profile::F512),
            "F1024" | "FALCON1024" | "FALCON-1024" => Ok(Profile::F1024),
            other => Err(format!("unknown signature profile `{other}` (expected F512 or F1024)")),
        }
    }
}
