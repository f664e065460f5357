//! Seed derivation for reproducible fan-out (trials, Monte-Carlo reps).

/// SplitMix64 finalizer applied to `root ⊕ stream·golden`. Per-stream seeds
/// depend only on `(root, stream)`, never on execution order.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
