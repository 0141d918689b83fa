//! Hierarchical seed derivation.
//!
//! Every random stream in a run descends from one master seed through a
//! path of labels, e.g. `master → "sampling" → device → batch → circuit`.
//! Each step mixes the parent seed with the FNV-1a hash of the label and an
//! index through SplitMix64, so streams are independent of evaluation order
//! and of how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed of `parent` for the stream named `label` at position `index`.
pub fn derive(parent: u64, label: &str, index: u64) -> u64 {
    let a = splitmix64(parent ^ fnv1a(label.as_bytes()));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Folds a sequence of labelled indices into one seed.
pub fn derive_path(parent: u64, path: &[(&str, u64)]) -> u64 {
    path.iter()
        .fold(parent, |seed, &(label, index)| derive(seed, label, index))
}

/// Portable, reproducible generator used for all simulation streams.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
