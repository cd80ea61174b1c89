//! Seed derivation so every random draw depends only on (master seed, what,
//! which) and never on evaluation order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(tag.as_bytes())) ^ splitmix64(index))
}

pub fn derive_str(master: u64, tag: &str, key: &str) -> u64 {
    derive(master, tag, fnv1a(key.as_bytes()))
}

pub fn rng(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, tag, index))
}

pub fn rng_str(master: u64, tag: &str, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_str(master, tag, key))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_separates_tags_and_indices() {
        let a = derive(1, "batch", 0);
        assert_eq!(a, derive(1, "batch", 0));
        assert_ne!(a, derive(1, "batch", 1));
        assert_ne!(a, derive(1, "crop", 0));
        assert_ne!(a, derive(2, "batch", 0));
    }
}
