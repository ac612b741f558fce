//! Per-cell seeds derived from the master seed.

/// One step of the splitmix64 generator.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds the cell coordinates into the master seed, one splitmix64 step per
/// coordinate, so every cell gets an independent stream.
pub fn cell_seed(master: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix64(master), |acc, &c| {
        splitmix64(acc ^ splitmix64(c))
    })
}

/// Coordinate tags keep seeds of different roles apart.
pub mod tag {
    pub const GRID: u64 = 1;
    pub const SWEEP: u64 = 2;
    pub const CRF: u64 = 3;
    pub const PARAMS: u64 = 10;
    pub const DATA: u64 = 11;
    pub const GROUND_TRUTH: u64 = 12;
    pub const REPLICATE: u64 = 13;
    pub const METHOD: u64 = 14;
    pub const PREDICT: u64 = 15;
    pub const TEST: u64 = 16;
}
