//! Reproducible Gaussian streams.
//!
//! Uniforms come from ChaCha8, a counter-based generator addressed by
//! `(seed, stream)`; Gaussians are obtained by inverse transform through
//! [`normal_quantile`]. Each latent component draws from its own stream label
//! and every Monte-Carlo replication derives its own seed with
//! [`derive_seed`], so results do not depend on thread scheduling.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Stream labels used by the simulators.
pub mod streams {
    pub const SHORT_RUN: u64 = 1;
    pub const LONG_RUN: u64 = 2;
    pub const SHORT_RUN_INIT: u64 = 3;
    pub const LONG_RUN_INIT: u64 = 4;
    pub const FUTURE: u64 = 5;
    pub const AUX: u64 = 6;
}

/// SplitMix64 finalizer used to derive independent child seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Inverse standard normal CDF.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "normal quantile needs p in (0,1), got {p}"
        )));
    }
    Ok(standard_normal().inverse_cdf(p))
}

pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

/// Seeded stream of uniforms and standard Gaussians.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    normal: Normal,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            normal: standard_normal(),
        }
    }

    /// Uniform on the open interval (0, 1) with 53 random bits.
    pub fn next_uniform(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        let u = self.next_uniform();
        self.normal.inverse_cdf(u)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_normal();
        }
    }
}
