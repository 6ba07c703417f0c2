use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic, platform-independent random stream.
pub type RngStream = ChaCha8Rng;

/// Generator for `(seed, stream)`. Distinct stream ids select independent
/// ChaCha keystreams under the same key.
pub fn seeded_rng(seed: u64, stream: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream id for item `index` of a named purpose. Stable across platforms and
/// independent of scheduling order.
pub fn derive_stream(seed: u64, purpose: &str, index: u64) -> u64 {
    let mut h = splitmix64(seed);
    for b in purpose.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ index)
}

/// Shorthand for `seeded_rng(seed, derive_stream(seed, purpose, index))`.
pub fn stream_for(seed: u64, purpose: &str, index: u64) -> RngStream {
    seeded_rng(seed, derive_stream(seed, purpose, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draws(mut r: RngStream) -> Vec<u64> {
        (0..100).map(|_| r.random()).collect()
    }

    #[test]
    fn same_seed_and_stream_repeat() {
        assert_eq!(draws(seeded_rng(42, 0)), draws(seeded_rng(42, 0)));
    }

    #[test]
    fn streams_differ() {
        assert_ne!(draws(seeded_rng(42, 0)), draws(seeded_rng(42, 1)));
    }

    #[test]
    fn derived_streams_are_stable() {
        assert_eq!(derive_stream(7, "utt", 3), derive_stream(7, "utt", 3));
        assert_ne!(derive_stream(7, "utt", 3), derive_stream(7, "utt", 4));
        assert_ne!(derive_stream(7, "utt", 3), derive_stream(7, "spk", 3));
        // frozen: changing the mixer would silently change every corpus
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }
}
