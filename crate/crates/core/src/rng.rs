//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream whose key is
//! derived from `(base seed, purpose, a, b)`. Streams are independent of each
//! other and of the order in which they are requested, so adding a draw in one
//! place (say, teacher sampling) never shifts the latency or shuffling draws
//! somewhere else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    ClassCenters = 1,
    ClientSizes = 2,
    ClientMixture = 3,
    TrainExamples = 4,
    EvalExamples = 5,
    ModelInit = 6,
    Cohort = 7,
    Latency = 8,
    Shuffle = 9,
    Teacher = 10,
    LatencyReport = 11,
    TimeLimit = 12,
    QuadSetup = 13,
    QuadNoise = 14,
    QuadAssign = 15,
    QuadProbe = 16,
}

/// Factory for named, reproducible random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Returns the stream for `purpose` indexed by `(a, b)`, typically
    /// `(client_id, round_id)`.
    pub fn stream(&self, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.seed ^ 0x5EED_5EED_5EED_5EED;
        for (i, word) in [purpose as u64, a, b, 0x9E37_79B9].into_iter().enumerate() {
            state = splitmix64(state ^ word.wrapping_mul(0xA24B_AED4_963E_E407));
            key[i * 8..(i + 1) * 8].copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
