use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child seed for a named purpose and index.
pub fn derive(base: u64, purpose: &str, index: u64) -> u64 {
    let mut h = mix(base);
    for b in purpose.bytes() {
        h = mix(h ^ b as u64);
    }
    mix(h ^ index)
}

pub fn rng(base: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, purpose, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_differ() {
        assert_ne!(derive(1, "a", 0), derive(1, "a", 1));
        assert_ne!(derive(1, "a", 0), derive(1, "b", 0));
        assert_ne!(derive(1, "a", 0), derive(2, "a", 0));
        assert_eq!(derive(7, "x", 3), derive(7, "x", 3));
    }
}
