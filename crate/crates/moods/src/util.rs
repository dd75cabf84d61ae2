//! Seed derivation and small numeric helpers shared across modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a stream tag.
///
/// Distinct tags give statistically independent streams, so every stochastic
/// stage (splits, shuffles, draws, generators) can own a seed without
/// correlated randomness between stages.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut state = seed ^ tag.wrapping_mul(0xA24B_AED4_963E_E407);
    let a = splitmix64(&mut state);
    let b = splitmix64(&mut state);
    a ^ b.rotate_left(23)
}

/// A portable, seedable RNG for the (seed, tag) stream.
pub fn rng_stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut state = seed ^ tag.wrapping_mul(0xA24B_AED4_963E_E407);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with the n-1 denominator; 0 for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derive_seed_depends_on_tag() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn rng_stream_is_reproducible() {
        let mut a = rng_stream(42, 9);
        let mut b = rng_stream(42, 9);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn sample_variance_matches_hand_value() {
        // {0, 2}: mean 1, sample variance (1 + 1) / 1 = 2.
        assert_eq!(sample_variance(&[0.0, 2.0]), 2.0);
        assert_eq!(sample_variance(&[5.0]), 0.0);
    }
}
