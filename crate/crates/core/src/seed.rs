//! Seed derivation.
//!
//! Every stochastic stage draws from its own generator, derived from the
//! root seed and a fixed stage label (plus an optional index such as an
//! entity id or an epoch). Stages therefore never share a stream, and
//! reordering or parallelizing one stage cannot perturb another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over `bytes`, starting from `state`.
pub fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from `root`, a stage `label` and an `index`.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let h = fnv1a(FNV_OFFSET ^ mix64(root), label.as_bytes());
    mix64(h ^ mix64(index.wrapping_add(0x5151_5151)))
}

/// A generator for one stage; see [`derive_seed`].
pub fn stage_rng(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, index))
}
