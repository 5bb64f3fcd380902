//! Seeded random streams.
//!
//! Every Monte Carlo unit of work (a replication, a resampling trial) draws
//! from its own ChaCha8 stream keyed by the run seed and the unit's
//! coordinates, so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name recorded in reports alongside the seed.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), stream keyed by splitmix64 of (seed, tags)";

/// Default seed for every command.
pub const DEFAULT_SEED: u64 = 20_250_101;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `seed` and a tuple of coordinates.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut key = 0x5EED_u64;
    for &t in tags {
        key = splitmix64(key ^ t);
    }
    rng.set_stream(key);
    rng
}
