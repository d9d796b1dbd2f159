//! Counter-based Gaussian noise.
//!
//! The generator is ChaCha8 (`rand_chacha`). A draw is addressed by
//! `(seed, stream, index)`: the stream selects the ChaCha stream and the
//! index selects the 64-bit word position. Standard normals are produced by
//! the inverse-CDF method from one 64-bit word each, so a particle's noise at
//! a given iteration does not depend on how the particle loop is scheduled.
//!
//! Stream 0 is reserved for initial sampling; iteration `k` uses stream `k + 1`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::{erfc, erfc_inv};

/// Standard normal quantile `Φ⁻¹(u)` for `u ∈ (0, 1)`.
pub fn standard_normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Standard normal CDF.
pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Maps a 64-bit word to the open interval (0, 1) using its top 53 bits.
#[inline]
fn open_unit(word: u64) -> f64 {
    ((word >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
}

impl NoiseStream {
    pub const INIT_STREAM: u64 = 0;

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iteration_stream(k: usize) -> u64 {
        k as u64 + 1
    }

    /// Fills `out` with standard normals at indices `offset..offset + out.len()`
    /// of `stream`.
    pub fn fill_normals(&self, stream: u64, offset: u64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.set_word_pos(u128::from(offset) * 2);
        for z in out.iter_mut() {
            *z = standard_normal_quantile(open_unit(rng.next_u64()));
        }
    }

    /// Uniforms on (0, 1), addressed like [`Self::fill_normals`].
    pub fn fill_uniforms(&self, stream: u64, offset: u64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.set_word_pos(u128::from(offset) * 2);
        for u in out.iter_mut() {
            *u = open_unit(rng.next_u64());
        }
    }
}
