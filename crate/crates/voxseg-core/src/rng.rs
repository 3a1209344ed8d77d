//! Seeded stream derivation.
//!
//! Every randomized stage of the pipeline draws from its own ChaCha8 stream,
//! derived from the run seed plus a list of tags (stage id, epoch, sample
//! index, ...). Streams are therefore independent of batch composition and
//! stable across runs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: u64 = 0x01;
pub const STREAM_CROP: u64 = 0x02;
pub const STREAM_AUGMENT: u64 = 0x03;
pub const STREAM_ORDER: u64 = 0x04;
pub const STREAM_PHANTOM: u64 = 0x05;
pub const STREAM_RESTORE: u64 = 0x06;
pub const STREAM_STYLE: u64 = 0x07;

/// splitmix64 step, the usual seed expander.
fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    *state = z ^ (z >> 31);
}

/// Derive an independent generator from `seed` and a tag path.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6c62_272e_07bb_0142;
    splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0x100_0000_01b3);
        splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        splitmix64(&mut state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Standard normal via Box-Muller; two uniform draws per sample.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    crate::fm::sqrt(-2.0 * crate::fm::ln(u1)) * crate::fm::cos(2.0 * core::f64::consts::PI * u2)
}
