use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Handle for one reproducible random draw.
///
/// The draw is counter-based: the key seeds a ChaCha stream selected by
/// `draw_index`, so the same draw can be re-materialised at any time and
/// evaluated at several points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub run_seed: u64,
    pub draw_index: u64,
}

pub fn derive_key(run_seed: u64, draw_index: u64) -> SampleKey {
    SampleKey {
        run_seed,
        draw_index,
    }
}

impl SampleKey {
    pub fn new(run_seed: u64, draw_index: u64) -> Self {
        derive_key(run_seed, draw_index)
    }

    /// Fresh generator positioned at the start of this draw's stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.run_seed);
        rng.set_stream(self.draw_index);
        rng
    }

    /// Generator for run-level randomness that must not collide with any
    /// sample draw (output index selection, probe points, data synthesis).
    pub fn auxiliary(run_seed: u64, purpose: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(splitmix64(run_seed ^ splitmix64(purpose.wrapping_add(0xA5A5_5A5A))))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
