//! Counter-based seed splitting.
//!
//! Every random stream in the crate is derived from one 64-bit seed plus a
//! list of integer tags (task, restart, epoch, ...). The tags select a ChaCha
//! stream, so streams are independent of each other and of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tag namespaces for the independent random streams.
pub mod tags {
    pub const SAMPLE: u64 = 1;
    pub const KMEANS: u64 = 2;
    pub const INIT: u64 = 3;
    pub const EPOCH: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const PERMUTE: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tag path into a single stream identifier.
pub fn stream_id(tags: &[u64]) -> u64 {
    tags.iter()
        .fold(0x6D6F_7270_6870_726Fu64, |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Returns the generator for `seed` on the stream selected by `tags`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(tags));
    rng
}
