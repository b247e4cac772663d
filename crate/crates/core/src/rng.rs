//! Seed derivation.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] seeded by a
//! 64-bit value derived from the master seed and a path of stream tags. A
//! path is folded through SplitMix64, so distinct paths give unrelated
//! seeds and the same path always gives the same seed.
//!
//! Stream layout used by the harness:
//!
//! | path                                  | consumer                          |
//! |---------------------------------------|-----------------------------------|
//! | `[TEST_FUNCTION]`                     | test-function coefficients/centers |
//! | `[THETA]`                             | reference value of theta           |
//! | `[REPLICATION, r, n, SCENARIOS]`      | outer scenarios of cell (n, r)     |
//! | `[REPLICATION, r, n, NOISE]`          | inner noise of cell (n, r)         |
//! | `[REPLICATION, r, n, ESTIMATOR, e]`   | estimator `e` (inducing set, init) |
//! | `[REPLICATION, r, n, FRESH]`          | fresh evaluation points            |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TEST_FUNCTION: u64 = 0;
pub const THETA: u64 = 1;
pub const REPLICATION: u64 = 2;

pub const SCENARIOS: u64 = 0;
pub const NOISE: u64 = 1;
pub const ESTIMATOR: u64 = 2;
pub const FRESH: u64 = 3;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` along `path`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &tag| {
        splitmix64(acc ^ splitmix64(tag))
    })
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, path: &[u64]) -> Rng {
    rng_from_seed(derive_seed(master, path))
}
