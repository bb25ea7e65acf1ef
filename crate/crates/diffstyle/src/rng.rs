//! Deterministic random-stream derivation.
//!
//! One run seed fans out into independent ChaCha8 streams keyed by a purpose
//! label and an index, e.g. `derive_rng(seed, "batch", step)`. This keeps the
//! whole pipeline reproducible without serializing generator state: a resumed
//! run re-derives exactly the streams the uninterrupted run would have used.
//! No platform-dependent hasher is involved, so streams are stable across
//! builds and machines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a over the label bytes; fixed constants, platform independent.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 step: the standard 64-bit finalizer used to stretch a seed.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent generator from `(seed, stream, index)`.
///
/// Different labels or indices give streams that are independent for every
/// practical purpose; the same triple always gives the same stream.
pub fn derive_rng(seed: u64, stream: &str, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ fnv1a(stream.as_bytes()).rotate_left(17) ^ index.wrapping_mul(0xa24b_aed4_963e_e407);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn first_draws(seed: u64, stream: &str, index: u64) -> [u64; 4] {
        let mut rng = derive_rng(seed, stream, index);
        std::array::from_fn(|_| rng.random())
    }

    #[test]
    fn same_triple_same_stream() {
        assert_eq!(first_draws(42, "batch", 3), first_draws(42, "batch", 3));
    }

    #[test]
    fn any_component_changes_the_stream() {
        let base = first_draws(42, "batch", 3);
        assert_ne!(base, first_draws(43, "batch", 3));
        assert_ne!(base, first_draws(42, "shuffle", 3));
        assert_ne!(base, first_draws(42, "batch", 4));
    }

    #[test]
    fn label_is_hashed_not_truncated() {
        // Labels sharing a prefix must not collide.
        assert_ne!(
            first_draws(0, "batch", 0),
            first_draws(0, "batch2", 0)
        );
    }

    #[test]
    fn streams_are_stable_across_versions() {
        // Frozen first draw of a reference triple; changing the derivation
        // would silently invalidate every recorded run, so pin it.
        let mut rng = derive_rng(1234, "test", 5);
        let x: u64 = rng.random();
        assert_eq!(x, 3599402972701388784, "derivation changed; recorded runs are invalid");
        // Distinct seeds keep distinct histories even at index extremes.
        assert_ne!(first_draws(u64::MAX, "x", u64::MAX), first_draws(0, "x", u64::MAX));
    }
}
