use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type SdRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SdRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` under `seed`; lets batch items be generated
/// in any order (or in parallel) without changing the result.
pub fn stream(seed: u64, index: u64) -> SdRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Two-level stream, e.g. (epoch, sample).
pub fn substream(seed: u64, major: u64, minor: u64) -> SdRng {
    let mixed = seed ^ major.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    stream(mixed, minor)
}
