//! Hierarchical seed derivation.
//!
//! Every random stream is keyed by a path of labels from a master seed
//! (master -> neuron -> trial -> stage), so two runs that share a prefix of
//! that path draw identical numbers for it regardless of what else they do.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree(u64);

impl SeedTree {
    pub fn new(master: u64) -> Self {
        SeedTree(master)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn child(self, key: u64) -> Self {
        SeedTree(mix(self.0.wrapping_add(GOLDEN).wrapping_add(mix(key ^ GOLDEN))))
    }

    pub fn named(self, label: &str) -> Self {
        // FNV-1a over the label bytes.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.child(h)
    }

    pub fn rng(self) -> ChaCha8Rng {
        rng(self.0)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_are_stable_and_distinct() {
        let root = SeedTree::new(7);
        assert_eq!(root.child(3), root.child(3));
        assert_ne!(root.child(3), root.child(4));
        assert_ne!(root.named("sample"), root.named("ratings"));
        assert_ne!(SeedTree::new(7).child(0), SeedTree::new(8).child(0));
        assert_eq!(root.child(1).named("x"), SeedTree::new(7).child(1).named("x"));
    }
}
