use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Named, independent streams of one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stream {
    Environment = 1,
    Policy = 2,
    PrivacyNoise = 3,
    TreeNoise = 4,
}

pub(crate) fn stream(seed: u64, which: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Seed of one stream used as a seed for a derived generator.
pub(crate) fn derived_seed(seed: u64, which: Stream) -> u64 {
    splitmix64(seed ^ splitmix64(which as u64))
}

/// Seed of trial `index` under a master seed.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
