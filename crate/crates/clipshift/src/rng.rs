//! Reproducible randomness: a counter-based generator keyed by
//! (global seed, trial id, step).
//!
//! Each trial owns one ChaCha8 generator whose 256-bit key is derived from
//! the global seed and the trial index; the ChaCha stream number carries the
//! step counter. Draws inside a step come from that step's stream, so a
//! trajectory is a pure function of (seed, trial) no matter how trials are
//! scheduled across workers, and two runs that share (seed, trial) see
//! identical noise step for step even if their per-step draw counts differ
//! elsewhere.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Reserved stream for draws outside the step loop (initialization,
/// Monte-Carlo side estimates). Step t uses stream t, with t >= 1.
const AUX_STREAM: u64 = u64::MAX;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The exclusive random stream of one trial.
pub struct TrialRng {
    rng: ChaCha8Rng,
}

impl TrialRng {
    pub fn new(seed: u64, trial: u64) -> Self {
        // Expand (seed, trial) into a 256-bit ChaCha key.
        let mut state = seed ^ trial.wrapping_mul(0xA076_1D64_78BD_642F);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        TrialRng {
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Positions the generator at the start of step `t`'s stream (t >= 1).
    pub fn at_step(&mut self, t: u64) -> &mut ChaCha8Rng {
        debug_assert!(t >= 1);
        self.rng.set_stream(t);
        self.rng.set_word_pos(0);
        &mut self.rng
    }

    /// Stream for draws made outside the step loop.
    pub fn aux(&mut self) -> &mut ChaCha8Rng {
        self.rng.set_stream(AUX_STREAM);
        self.rng.set_word_pos(0);
        &mut self.rng
    }
}
