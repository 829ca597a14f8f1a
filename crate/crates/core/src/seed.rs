//! Deterministic seed derivation.
//!
//! Every random decision in the crate draws from a ChaCha stream seeded
//! through [`derive_seed`], so results are reproducible from a single master
//! seed regardless of scheduling or worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a path of context labels
/// (tags, partition indices, block indices, replicate numbers, ...).
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = mix(master);
    for &part in path {
        state = mix(state ^ mix(part));
    }
    state
}

/// A ChaCha generator seeded from `master` and a derivation path.
pub fn seeded_rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

// Context tags for the derivation paths. Arbitrary but fixed constants;
// changing any of them changes every downstream random stream.
pub(crate) const TAG_PARTITION_SHUFFLE: u64 = 0x5041_5254;
pub(crate) const TAG_INSTANCE: u64 = 0x494e_5354;
pub(crate) const TAG_IID_DRAW: u64 = 0x4949_4452;
pub(crate) const TAG_IMPUTE: u64 = 0x494d_5054;
pub(crate) const TAG_SELECTOR: u64 = 0x53_454c;
pub(crate) const TAG_THRESHOLD_CV: u64 = 0x5448_4356;
pub(crate) const TAG_DATA: u64 = 0x4441_5441;
pub(crate) const TAG_MASK: u64 = 0x4d41_534b;
pub(crate) const TAG_METHOD: u64 = 0x4d45_5448;
pub(crate) const TAG_FOLDS: u64 = 0x464f_4c44;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_path_sensitive() {
        let a = derive_seed(42, &[1, 2]);
        let b = derive_seed(42, &[1, 2]);
        assert_eq!(a, b);
        assert_ne!(a, derive_seed(42, &[2, 1]));
        assert_ne!(a, derive_seed(43, &[1, 2]));
        assert_ne!(a, derive_seed(42, &[1]));
    }

    #[test]
    fn distinct_tags_yield_distinct_streams() {
        let tags = [
            TAG_PARTITION_SHUFFLE,
            TAG_INSTANCE,
            TAG_IID_DRAW,
            TAG_IMPUTE,
            TAG_SELECTOR,
            TAG_THRESHOLD_CV,
            TAG_DATA,
            TAG_MASK,
            TAG_METHOD,
            TAG_FOLDS,
        ];
        let mut seen = std::collections::HashSet::new();
        for t in tags {
            assert!(seen.insert(derive_seed(7, &[t])));
        }
    }
}
