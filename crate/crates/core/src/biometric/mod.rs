//! Embedding-space identity checks: normalization, cosine matching,
//! liveness gating and the hash-then-sign binding of templates.

mod provider;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sigscheme::{self, PublicKey, SecretKey, SigError, Signature};

pub use provider::{perturb, uniform_on_sphere, EmbeddingProvider, SyntheticProvider};

pub const EMBEDDING_DIM: usize = 512;
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.4;
pub const DEFAULT_SPOOF_THRESHOLD: f64 = 0.5;
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiometricError {
    #[error("embedding is zero or contains non-finite values")]
    DegenerateEmbedding,
    #[error("embedding must have {EMBEDDING_DIM} values, got {0}")]
    DimensionMismatch(usize),
    #[error("template set is empty")]
    EmptyTemplateSet,
    #[error("spoof score {0} is outside [0, 1]")]
    InvalidSpoofScore(f64),
    #[error(transparent)]
    Signature(#[from] SigError),
}

/// L2-normalized embedding plus the norm it had before scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceEmbedding {
    values: Vec<f32>,
    quality_norm: f64,
}

impl FaceEmbedding {
    /// Rebuilds an embedding that is already stored normalized, checking
    /// dimension and unit norm.
    pub fn from_normalized(values: Vec<f32>, quality_norm: f64) -> Result<Self, BiometricError> {
        if values.len() != EMBEDDING_DIM {
            return Err(BiometricError::DimensionMismatch(values.len()));
        }
        let norm = l2(&values);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE || quality_norm.is_nan() || quality_norm < 0.0 {
            return Err(BiometricError::DegenerateEmbedding);
        }
        Ok(FaceEmbedding { values, quality_norm })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn quality_norm(&self) -> f64 {
        self.quality_norm
    }

    /// Little-endian f32 encoding; the input of [`FaceEmbedding::digest`].
    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn digest(&self) -> [u8; 32] {
        crate::sha256(&self.canonical_bytes())
    }
}

fn l2(values: &[f32]) -> f64 {
    values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
}

/// Scales `raw` to unit length. A vector already within tolerance of unit
/// length is kept bit-for-bit.
pub fn normalize(raw: &[f64]) -> Result<FaceEmbedding, BiometricError> {
    if raw.len() != EMBEDDING_DIM {
        return Err(BiometricError::DimensionMismatch(raw.len()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(BiometricError::DegenerateEmbedding);
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(BiometricError::DegenerateEmbedding);
    }
    let as_is: Vec<f32> = raw.iter().map(|&v| v as f32).collect();
    if (l2(&as_is) - 1.0).abs() <= UNIT_TOLERANCE {
        return Ok(FaceEmbedding { values: as_is, quality_norm: norm });
    }
    let mut values: Vec<f32> = raw.iter().map(|&v| (v / norm) as f32).collect();
    // f32 rounding can leave the norm marginally off; one rescale settles it
    let n32 = l2(&values);
    if (n32 - 1.0).abs() > UNIT_TOLERANCE {
        for v in &mut values {
            *v = (*v as f64 / n32) as f32;
        }
    }
    Ok(FaceEmbedding { values, quality_norm: norm })
}

/// Dot product of two unit embeddings, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &FaceEmbedding, b: &FaceEmbedding) -> f64 {
    let dot: f64 = a.values.iter().zip(&b.values).map(|(&x, &y)| x as f64 * y as f64).sum();
    dot.clamp(-1.0, 1.0)
}

/// One capture from a provider. Higher `spoof_score` is more spoof-like.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSample {
    pub embedding: FaceEmbedding,
    pub spoof_score: f64,
    pub provider_id: String,
}

impl CaptureSample {
    pub fn new(embedding: FaceEmbedding, spoof_score: f64, provider_id: impl Into<String>) -> Result<Self, BiometricError> {
        if !(0.0..=1.0).contains(&spoof_score) {
            return Err(BiometricError::InvalidSpoofScore(spoof_score));
        }
        Ok(CaptureSample { embedding, spoof_score, provider_id: provider_id.into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Liveness {
    Live,
    Spoof,
}

/// Fail-closed: a score equal to the threshold is a spoof.
pub fn liveness_gate(sample: &CaptureSample, spoof_threshold: f64) -> Liveness {
    if sample.spoof_score >= spoof_threshold {
        Liveness::Spoof
    } else {
        Liveness::Live
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult<Id> {
    pub best_id: Option<Id>,
    pub similarity: f64,
    pub accepted: bool,
    pub threshold: f64,
}

/// Linear scan for the most similar template; ties go to the lowest id.
pub fn find_best_match<'a, Id, I>(probe: &FaceEmbedding, templates: I, threshold: f64) -> Result<MatchResult<Id>, BiometricError>
where
    Id: Ord + Clone + 'a,
    I: IntoIterator<Item = (&'a Id, &'a FaceEmbedding)>,
{
    let mut best: Option<(&Id, f64)> = None;
    for (id, template) in templates {
        let s = cosine_similarity(probe, template);
        best = match best {
            Some((bid, bs)) if bs > s || (bs == s && bid <= id) => Some((bid, bs)),
            _ => Some((id, s)),
        };
    }
    let (id, similarity) = best.ok_or(BiometricError::EmptyTemplateSet)?;
    Ok(MatchResult { best_id: Some(id.clone()), similarity, accepted: similarity >= threshold, threshold })
}

/// Digest of a template and a signature over it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedEmbedding {
    pub embedding_digest: [u8; 32],
    pub signature: Signature,
    /// Fingerprint of the signing public key.
    pub signer: [u8; 32],
}

pub fn sign_embedding(secret: &SecretKey, embedding: &FaceEmbedding) -> Result<SignedEmbedding, SigError> {
    let digest = embedding.digest();
    let signature = sigscheme::sign(secret, &digest)?;
    Ok(SignedEmbedding { embedding_digest: digest, signature, signer: secret.public_key().fingerprint() })
}

/// True iff the digest matches `embedding` and the signature over it verifies
/// under `public`.
pub fn verify_signed_embedding(public: &PublicKey, embedding: &FaceEmbedding, signed: &SignedEmbedding) -> Result<bool, SigError> {
    if signed.signer != public.fingerprint() || signed.embedding_digest != embedding.digest() {
        return Ok(false);
    }
    sigscheme::verify(public, &signed.embedding_digest, &signed.signature)
}
