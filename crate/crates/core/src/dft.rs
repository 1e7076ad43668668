//! Unitary frequency ↔ delay transforms.
//!
//! `freq_to_delay` is the inverse DFT `g[τ] = N^{-1/2} Σ_n h[n] e^{+j2πnτ/N}` and
//! `delay_to_freq` its inverse, so a path delayed by `d` taps, which shows up as
//! `e^{-j2πnd/N}` across subcarriers, maps to tap `d`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

fn transform(x: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("transform of an empty sequence".into()));
    }
    let mut buf = x.to_vec();
    plan(buf.len(), inverse).process(&mut buf);
    let scale = 1.0 / (buf.len() as f64).sqrt();
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(buf)
}

pub fn freq_to_delay(h: &[Complex64]) -> Result<Vec<Complex64>> {
    transform(h, true)
}

pub fn delay_to_freq(g: &[Complex64]) -> Result<Vec<Complex64>> {
    transform(g, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    // Direct O(N^2) evaluation, kept independent of rustfft.
    fn naive_idft(h: &[Complex64]) -> Vec<Complex64> {
        let n = h.len();
        (0..n)
            .map(|tau| {
                h.iter()
                    .enumerate()
                    .map(|(k, v)| v * Complex64::from_polar(1.0, 2.0 * PI * (k * tau) as f64 / n as f64))
                    .sum::<Complex64>()
                    / (n as f64).sqrt()
            })
            .collect()
    }

    fn random(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = RngStream::new(seed);
        (0..n).map(|_| rng.cn(1.0)).collect()
    }

    #[test]
    fn flat_spectrum_is_single_tap() {
        let g = freq_to_delay(&[c(1.0, 0.0); 4]).unwrap();
        let want = [c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn linear_phase_is_tap_one() {
        let n = 16;
        let h: Vec<_> = (0..n)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        let g = freq_to_delay(&h).unwrap();
        for (tau, v) in g.iter().enumerate() {
            let want = if tau == 1 { 4.0 } else { 0.0 };
            assert!((v - c(want, 0.0)).norm() < 1e-12, "tap {tau}: {v}");
        }
    }

    #[test]
    fn matches_direct_sum() {
        for n in [1, 5, 12, 336] {
            let h = random(n, n as u64);
            let fast = freq_to_delay(&h).unwrap();
            for (a, b) in fast.iter().zip(naive_idft(&h)) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn impulse_and_zero() {
        let mut g = vec![c(0.0, 0.0); 8];
        assert!(delay_to_freq(&g).unwrap().iter().all(|v| v.norm() == 0.0));
        g[0] = c(1.0, 0.0);
        let h = delay_to_freq(&g).unwrap();
        let s = 1.0 / 8f64.sqrt();
        assert!(h.iter().all(|v| (v - c(s, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn empty_rejected() {
        assert!(freq_to_delay(&[]).is_err());
        assert!(delay_to_freq(&[]).is_err());
    }

    #[test]
    fn round_trip_and_unitary() {
        for (n, seed) in [(7, 1), (64, 2), (3360, 3)] {
            let x = random(n, seed);
            let g = freq_to_delay(&x).unwrap();
            let back = delay_to_freq(&g).unwrap();
            let err: f64 = x.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "round trip error {err}");
            let nx: f64 = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let ng: f64 = g.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!((nx - ng).abs() < 1e-12 * nx.max(1.0));
        }
    }
}
