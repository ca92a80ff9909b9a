//! Deterministic seed derivation. Every random stream in the crate is keyed
//! by `(base seed, stream, index)` so results do not depend on evaluation
//! order or thread count.

/// Stream tags.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const POOL: u64 = 2;
    pub const LEARNER: u64 = 3;
    pub const RANDOM_SELECT: u64 = 4;
    pub const SYNTH_IMAGE: u64 = 5;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        assert_ne!(derive(1, stream::POOL, 0), derive(1, stream::SPLIT, 0));
        assert_ne!(derive(1, stream::POOL, 0), derive(1, stream::POOL, 1));
        assert_eq!(derive(7, 3, 9), derive(7, 3, 9));
    }
}
