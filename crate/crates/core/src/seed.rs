//! Counter-based seed derivation.
//!
//! Every random stream in a run is keyed by `(master, stream, index)` so that the
//! value drawn for configuration `k` or Monte Carlo sample `k` never depends on
//! how work was scheduled.

/// Stream tag for spatial bath configurations.
pub const CONFIGURATION: u64 = 0x636f_6e66;
/// Stream tag for Monte Carlo bath-state samples.
pub const BATH_STATE: u64 = 0x6d63_7374;
/// Stream tag for ensemble subsampling repeats.
pub const SUBSAMPLE: u64 = 0x626f_6f74;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed of element `index` of `stream` under `master`.
pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}
