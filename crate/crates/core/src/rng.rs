//! Deterministic random streams.
//!
//! Every (run, unit) pair gets its own ChaCha8 stream derived from the root
//! seed, so results do not depend on thread count or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for unit `unit` within Monte Carlo run `run`.
pub fn stream(root: u64, run: u64, unit: u64) -> ChaCha8Rng {
    let mut s = root;
    let a = splitmix64(&mut s);
    let mut s = a ^ run.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let b = splitmix64(&mut s);
    let mut s = b ^ unit.wrapping_mul(0xA076_1D64_78BD_642F);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Unit id reserved for measurement noise in closed-loop runs.
pub const MEASUREMENT_UNIT: u64 = u64::MAX;
/// Unit id reserved for aggregate-level sampling.
pub const AGGREGATE_UNIT: u64 = u64::MAX - 1;
