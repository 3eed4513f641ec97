//! Named random substreams derived from a single root seed.
//!
//! Every consumer of randomness (dataset generation, parameter
//! initialisation, minibatch order, evaluation batches) asks for its own
//! stream by name. Adding a new consumer therefore never shifts the values
//! an existing one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label bytes. Stable across platforms and toolchains,
/// unlike `DefaultHasher`.
fn stream_id(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Deterministic generator for `(seed, label)`.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(label));
    rng
}
