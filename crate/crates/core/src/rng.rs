//! Deterministic random streams.
//!
//! Every random draw in an experiment comes from a stream identified by
//! `(master_seed, experiment, purpose, sub)`. Streams are ChaCha8 generators
//! whose 256-bit seed is derived from the identifier with SplitMix64, so two
//! equal specs always reproduce the same sequence and parallel execution order
//! never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Purpose {
    Truth,
    ObservationNoise,
    Prior,
    Perturbation,
    PriorCrossCovariance,
    Custom(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Truth => 1,
            Purpose::ObservationNoise => 2,
            Purpose::Prior => 3,
            Purpose::Perturbation => 4,
            Purpose::PriorCrossCovariance => 5,
            Purpose::Custom(t) => 0x1000_0000 ^ t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RngSpec {
    pub master_seed: u64,
    pub experiment: u64,
    pub purpose: Purpose,
    /// Secondary index, e.g. the assimilation time of a perturbation batch.
    pub sub: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64, experiment: u64, purpose: Purpose) -> Self {
        Self {
            master_seed,
            experiment,
            purpose,
            sub: 0,
        }
    }

    pub fn with_sub(self, sub: u64) -> Self {
        Self { sub, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.master_seed;
        let mut seed = [0u8; 32];
        let words = [self.experiment, self.purpose.tag(), self.sub, 0x5eed];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
            state ^= w;
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fills `out` with independent standard normal draws.
pub fn fill_standard_normal<R: rand::Rng>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(rand_distr::StandardNormal);
    }
}
