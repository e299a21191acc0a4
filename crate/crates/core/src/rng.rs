//! Reproducible per-path random streams.
//!
//! Each ensemble member gets its own generator whose 256-bit state is derived
//! from `(seed, path)` alone, so results do not depend on which thread runs a
//! path or in what order paths complete.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type PathRng = Xoshiro256PlusPlus;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn path_rng(seed: u64, path: u64) -> PathRng {
    let key = splitmix64(seed) ^ splitmix64(path.wrapping_mul(0xD1B5_4A32_D192_ED03));
    let mut state = [0u8; 32];
    for (i, chunk) in state.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key.wrapping_add(i as u64)).to_le_bytes());
    }
    Xoshiro256PlusPlus::from_seed(state)
}
