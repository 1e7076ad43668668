//! Seedable random streams.
//!
//! Every realization owns its own [`RngStream`], addressed by a `(seed, stream)`
//! pair, so results do not depend on how work is scheduled across threads.
//! Reproducibility holds within this implementation only.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, 0)
    }

    /// Independent stream `stream` under the same master seed (ChaCha stream id).
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Forks a child stream whose key is drawn from this one.
    pub fn fork(&mut self) -> RngStream {
        let seed = self.inner.random::<u64>();
        RngStream::new(seed)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Exponential variate with the given mean.
    pub fn exponential(&mut self, mean: f64) -> f64 {
        Exp::new(1.0 / mean)
            .expect("positive mean")
            .sample(&mut self.inner)
    }

    /// CN(0, variance) without the argument check; callers guarantee variance ≥ 0.
    #[inline]
    pub fn cn(&mut self, variance: f64) -> Complex64 {
        let s = (variance / 2.0).sqrt();
        let re: f64 = StandardNormal.sample(&mut self.inner);
        let im: f64 = StandardNormal.sample(&mut self.inner);
        Complex64::new(s * re, s * im)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }
}

/// Circularly-symmetric complex Gaussian sample: independent real and
/// imaginary parts, each N(0, variance / 2).
pub fn draw_complex_gaussian(rng: &mut RngStream, variance: f64) -> Result<Complex64> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "complex gaussian variance must be finite and >= 0, got {variance}"
        )));
    }
    if variance == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    Ok(rng.cn(variance))
}
