//! Derivation of independent subsystem seeds from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named subsystem, e.g. `"corpus"`, `"corruption"`, `"sampling"`.
pub fn derive(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(root ^ splitmix(h))
}

/// Seed for the `index`-th item of a stream.
pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    splitmix(derive(root, label).wrapping_add(index))
}

pub fn rng(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_indices_separate_streams() {
        assert_eq!(derive(7, "corpus"), derive(7, "corpus"));
        assert_ne!(derive(7, "corpus"), derive(7, "sampling"));
        assert_ne!(derive(7, "corpus"), derive(8, "corpus"));
        assert_ne!(derive_indexed(7, "s", 0), derive_indexed(7, "s", 1));
    }
}
