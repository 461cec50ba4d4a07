use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{normalize, BiometricError, CaptureSample, EMBEDDING_DIM};

/// Source of capture samples. Real camera and CNN integrations implement
/// this; the node itself only sees embeddings and spoof scores.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;

    /// A fresh capture of `subject`. Distinct `attempt` values give
    /// independent noise.
    fn capture(&self, subject: u64, attempt: u64) -> Result<CaptureSample, BiometricError>;
}

/// Direction uniformly distributed on the unit sphere (not yet normalized).
pub fn uniform_on_sphere<R: Rng>(rng: &mut R) -> Vec<f64> {
    (0..EMBEDDING_DIM).map(|_| StandardNormal.sample(rng)).collect()
}

/// `base` plus independent Gaussian noise of standard deviation `sigma` per
/// coordinate (not yet normalized).
pub fn perturb<R: Rng>(base: &[f32], sigma: f64, rng: &mut R) -> Vec<f64> {
    base.iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v as f64 + sigma * z
        })
        .collect()
}

/// Deterministic synthetic identities: each subject id seeds its own
/// template, and captures are that template plus Gaussian noise.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    seed: u64,
    noise_sigma: f64,
    spoof_score: f64,
}

impl SyntheticProvider {
    pub fn new(seed: u64, noise_sigma: f64) -> Self {
        SyntheticProvider { seed, noise_sigma, spoof_score: 0.05 }
    }

    /// Same identities, but every capture reports `score` as its spoof score.
    pub fn with_spoof_score(mut self, score: f64) -> Self {
        self.spoof_score = score;
        self
    }

    fn rng(&self, subject: u64, stream: u64) -> ChaCha20Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&subject.to_le_bytes());
        seed[16..24].copy_from_slice(&stream.to_le_bytes());
        ChaCha20Rng::from_seed(seed)
    }

    /// Noise-free unit template of `subject`.
    pub fn template(&self, subject: u64) -> Vec<f32> {
        let raw = uniform_on_sphere(&mut self.rng(subject, 0));
        normalize(&raw).expect("gaussian draw is never zero").values().to_vec()
    }

    /// Noise-free enrollment capture of `subject`: the stored template that
    /// later noisy probes are matched against.
    pub fn enrollment(&self, subject: u64) -> Result<CaptureSample, BiometricError> {
        let values = self.template(subject).into_iter().map(f64::from).collect::<Vec<_>>();
        CaptureSample::new(normalize(&values)?, self.spoof_score, self.id())
    }

    /// Raw (unnormalized) noisy capture values.
    pub fn raw_capture(&self, subject: u64, attempt: u64) -> Vec<f64> {
        perturb(&self.template(subject), self.noise_sigma, &mut self.rng(subject, attempt + 1))
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn id(&self) -> &str {
        "synthetic"
    }

    fn capture(&self, subject: u64, attempt: u64) -> Result<CaptureSample, BiometricError> {
        let embedding = normalize(&self.raw_capture(subject, attempt))?;
        CaptureSample::new(embedding, self.spoof_score, self.id())
    }
}
