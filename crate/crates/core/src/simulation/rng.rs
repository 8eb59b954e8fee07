//! Reproducible, stream-split random numbers.
//!
//! Every replicate draws from its own ChaCha8 stream keyed by
//! `(seed, replicate index)`, so results do not depend on scheduling or on
//! how many replicates run.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream reserved for superpopulation (truth) draws.
pub const SUPERPOP_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SimRng { inner, spare: None }
    }

    /// Uniform on the open interval (0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by the Box–Muller transform.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * t.sin());
        r * t.cos()
    }

    /// `true` with probability `p` (inverse-CDF rule `U < p`).
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}
