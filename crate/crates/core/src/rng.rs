//! Deterministic random-number streams.
//!
//! Every stochastic routine in the crate draws from a [`ChaCha8Rng`] whose
//! 256-bit key is derived from `(seed, label, replica)` by the splitmix64
//! absorption below.  Streams with distinct keys are independent for Monte
//! Carlo purposes, replicas can be generated in parallel in any order, and
//! reruns with the same seed reproduce results bit-for-bit on every platform.
//!
//! The same construction derives per-scenario seeds in the CLI: the scenario
//! id is hashed with FNV-1a and absorbed together with the run seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the splitmix64 output function (Steele et al.).
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a hash of a byte string, used to turn textual labels into u64 keys.
#[inline]
pub fn hash_label(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Absorb a sequence of words into a single key by iterated splitmix rounds.
pub fn mix(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x6a09_e667_f3bc_c908; // sqrt(2) fractional bits
    let mut acc: u64 = 0;
    for p in parts {
        state ^= p.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        acc ^= splitmix64(&mut state);
    }
    // A final round decorrelates keys that differ only in the last word.
    state ^= acc;
    splitmix64(&mut state)
}

/// Derive the seed used for a named scenario within a run.
pub fn scenario_seed(run_seed: u64, scenario_id: &str) -> u64 {
    mix(&[run_seed, hash_label(scenario_id)])
}

/// A ChaCha8 stream keyed by `(seed, label, replica)`.
///
/// The full 256-bit key is expanded from the mixed words so that replica
/// streams differ in all key bytes, not just a counter.
pub fn stream(seed: u64, label: &str, replica: u64) -> ChaCha8Rng {
    let mut state = mix(&[seed, hash_label(label), replica]);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
