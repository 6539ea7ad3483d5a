//! Seed derivation for reproducible simulation streams.
//!
//! Every random stream in a run is keyed by a tuple such as
//! `(seed, round, collaborator id, purpose)` so results never depend on
//! scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags that separate independent streams sharing the same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Select = 2,
    Outage = 3,
    Train = 4,
    Response = 5,
    Generate = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the identifier bytes; stable across platforms and releases.
pub fn hash_id(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mixes a list of words into one 64-bit seed.
pub fn derive(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, w| splitmix64(acc ^ splitmix64(*w)))
}

pub fn round_seed(seed: u64, round: usize, collaborator: &str, stream: Stream) -> u64 {
    derive(&[seed, round as u64, hash_id(collaborator), stream as u64])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
