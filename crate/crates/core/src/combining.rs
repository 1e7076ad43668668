//! Angle and K-factor estimation on the sub-6 GHz estimate, MRC combining and
//! the non-ML baselines.

use crate::channel::steering_from_sin;
use crate::config::{BandConfig, DualBandConfig};
use crate::error::{Error, Result};
use crate::linalg::{ChannelTensor, ComplexMatrix, ComplexVector};
use crate::method::Method;

pub const DEFAULT_ANGLE_GRID: usize = 181;

const K_FACTOR_MAX: f64 = 1e4;
const GAMMA_MIN: f64 = 1e-6;
const GOLDEN_ITERATIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleEstimate {
    pub aoa: f64,
    pub aod: f64,
    /// `J(φ̃, ϑ̃) = Σ_n |a_rx(φ̃)^H H̃[n] a_tx(ϑ̃)|²`
    pub objective: f64,
}

/// `Σ_n (H_n^H a)(H_n^H a)^H`, so that `J = a_tx^H R a_tx` for a fixed receive beam `a`.
fn tx_covariance(h: &ChannelTensor, a_rx: &ComplexVector) -> ComplexMatrix {
    let mut r = ComplexMatrix::zeros(h.cols(), h.cols());
    for hn in h.iter() {
        let v = hn.ad_mul(a_rx);
        r.ger(1.0.into(), &v, &v.conjugate(), 1.0.into());
    }
    r
}

/// `Σ_n (H_n a)(H_n a)^H`, so that `J = a_rx^H Q a_rx` for a fixed transmit beam `a`.
fn rx_covariance(h: &ChannelTensor, a_tx: &ComplexVector) -> ComplexMatrix {
    let mut q = ComplexMatrix::zeros(h.rows(), h.rows());
    for hn in h.iter() {
        let z = hn * a_tx;
        q.ger(1.0.into(), &z, &z.conjugate(), 1.0.into());
    }
    q
}

fn quad(m: &ComplexMatrix, a: &ComplexVector) -> f64 {
    a.dotc(&(m * a)).re
}

fn golden_max(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERATIONS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Folds a refined direction cosine back into [-1, 1] using the array's
/// spatial period `λ/Δd`; clamps when the alias is not physical.
fn wrap_sin(u: f64, period: f64) -> f64 {
    if u > 1.0 {
        let alias = u - period;
        if alias >= -1.0 {
            alias
        } else {
            1.0
        }
    } else if u < -1.0 {
        let alias = u + period;
        if alias <= 1.0 {
            alias
        } else {
            -1.0
        }
    } else {
        u
    }
}

/// Joint AoA/AoD matched-filter search: exhaustive grid uniform in sin-space,
/// then one golden-section pass per axis (receive first) inside ±one grid step.
pub fn estimate_angles(h: &ChannelTensor, band: &BandConfig, grid_size: usize) -> Result<AngleEstimate> {
    if grid_size < 2 {
        return Err(Error::InvalidArgument(format!("angle grid needs >= 2 points, got {grid_size}")));
    }
    if (h.rows(), h.cols()) != (band.num_rx, band.num_tx) {
        return Err(Error::dims(
            format!("{}x{}", band.num_rx, band.num_tx),
            format!("{}x{}", h.rows(), h.cols()),
        ));
    }
    let ratio = band.spacing_ratio();
    let step = 2.0 / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|i| -1.0 + step * i as f64).collect();
    let tx_beams: Vec<ComplexVector> = grid.iter().map(|&u| steering_from_sin(band.num_tx, ratio, u)).collect();

    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for (i, &u_rx) in grid.iter().enumerate() {
        let r = tx_covariance(h, &steering_from_sin(band.num_rx, ratio, u_rx));
        for (k, a_tx) in tx_beams.iter().enumerate() {
            let j = quad(&r, a_tx);
            if j > best.0 {
                best = (j, i, k);
            }
        }
    }

    let period = 1.0 / ratio;
    let a_tx = &tx_beams[best.2];
    let q = rx_covariance(h, a_tx);
    let u0 = grid[best.1];
    let u_rx = golden_max(u0 - step, u0 + step, |u| quad(&q, &steering_from_sin(band.num_rx, ratio, u)));
    let u_rx = wrap_sin(u_rx, period);

    let a_rx = steering_from_sin(band.num_rx, ratio, u_rx);
    let r = tx_covariance(h, &a_rx);
    let u0 = grid[best.2];
    let u_tx = golden_max(u0 - step, u0 + step, |u| quad(&r, &steering_from_sin(band.num_tx, ratio, u)));
    let u_tx = wrap_sin(u_tx, period);

    let objective = quad(&r, &steering_from_sin(band.num_tx, ratio, u_tx));
    Ok(AngleEstimate {
        aoa: u_rx.asin(),
        aod: u_tx.asin(),
        objective,
    })
}

/// Method-of-moments K-factor from the power moments of every entry across
/// antennas and subcarriers: `γ̂ = var(|h|²)/E[|h|²]²`, `K̃ = √(1-γ̂)/(1-√(1-γ̂))`.
pub fn estimate_k_factor(h: &ChannelTensor) -> Result<f64> {
    let count = h.len() * h.rows() * h.cols();
    if count < 8 {
        return Err(Error::InvalidArgument(format!(
            "K-factor estimation needs at least 8 samples, got {count}"
        )));
    }
    let powers = h.iter().flat_map(|m| m.iter().map(|v| v.norm_sqr()));
    let (mut s1, mut s2) = (0.0, 0.0);
    for p in powers {
        s1 += p;
        s2 += p * p;
    }
    let n = count as f64;
    let m2 = s1 / n;
    if m2 <= 0.0 {
        return Ok(0.0);
    }
    let var = (s2 / n - m2 * m2).max(0.0);
    let gamma = (var / (m2 * m2)).clamp(GAMMA_MIN, 1.0);
    let root = (1.0 - gamma).sqrt();
    Ok((root / (1.0 - root)).clamp(0.0, K_FACTOR_MAX))
}

/// Approximate optimal MRC factor
/// `ŵ = M σ² / (M/(1 + c_K K̃) + (1 + M) σ²)`, `M = M_Tx·M_Rx` of the mmWave band.
pub fn mrc_weight(k_sub6: f64, noise_var: f64, cfg: &DualBandConfig) -> f64 {
    let m = cfg.mmw.num_links() as f64;
    let num = m * noise_var;
    if num == 0.0 {
        return 0.0;
    }
    num / (m / (1.0 + cfg.k_scale * k_sub6) + (1.0 + m) * noise_var)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedEstimate {
    pub h: ChannelTensor,
    pub method: Method,
    /// MRC factor ŵ, when the estimate came from MRC.
    pub weight: Option<f64>,
}

/// `H̄[n] = ŵ Ĥ[n] + (1 - ŵ) H̃[n]`
pub fn mrc_combine(oob: &ChannelTensor, inband: &ChannelTensor, weight: f64) -> Result<CombinedEstimate> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidArgument(format!("MRC weight must lie in [0, 1], got {weight}")));
    }
    Ok(CombinedEstimate {
        h: oob.affine(weight, inband, 1.0 - weight)?,
        method: Method::Mrc,
        weight: Some(weight),
    })
}

pub fn baseline_inband(inband: &ChannelTensor) -> CombinedEstimate {
    CombinedEstimate {
        h: inband.clone(),
        method: Method::NonMl,
        weight: None,
    }
}

pub fn baseline_perfect(truth: &ChannelTensor) -> CombinedEstimate {
    CombinedEstimate {
        h: truth.clone(),
        method: Method::Perfect,
        weight: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{gen_channel, gen_los, ScenarioDraw};
    use crate::linalg::{frobenius_sq, C64};
    use crate::pilot::{allocate_pilots, ls_estimate_interpolate, simulate_training_step1};
    use crate::rng::RngStream;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn band(n: usize) -> BandConfig {
        BandConfig::new(2.55e9, n as f64 * 60e3, 60e3, 8, 8, 1.19e-6)
    }

    #[test]
    fn on_grid_los_recovered() {
        let b = band(32);
        let step = 2.0 / 180.0;
        for (i_rx, i_tx) in [(90, 90), (30, 121), (170, 5), (61, 61)] {
            let u_rx = -1.0 + step * i_rx as f64;
            let u_tx = -1.0 + step * i_tx as f64;
            let h = ChannelTensor::repeat(&gen_los(&b, u_tx.asin(), u_rx.asin(), 0.9), 32);
            let est = estimate_angles(&h, &b, DEFAULT_ANGLE_GRID).unwrap();
            assert!((est.aoa - u_rx.asin()).abs() < 1e-6, "{est:?}");
            assert!((est.aod - u_tx.asin()).abs() < 1e-6, "{est:?}");
            assert!((est.objective - 32.0 * 64.0 * 64.0).abs() < 1e-6 * est.objective);
        }
        let h = ChannelTensor::repeat(&gen_los(&b, 0.0, 0.0, 0.0), 32);
        let est = estimate_angles(&h, &b, DEFAULT_ANGLE_GRID).unwrap();
        assert!(est.aoa.abs() < 1e-6 && est.aod.abs() < 1e-6);
        assert!(estimate_angles(&h, &b, 1).is_err());
    }

    #[test]
    fn off_grid_and_endfire_aliasing() {
        let b = band(16);
        for (aod, aoa) in [(0.123, -0.456), (1.55, -1.3), (-1.5605, 1.5705)] {
            let h = ChannelTensor::repeat(&gen_los(&b, aod, aoa, 0.0), 16);
            let est = estimate_angles(&h, &b, DEFAULT_ANGLE_GRID).unwrap();
            // compare beams, not angles: ±90° are the same direction for λ/2 spacing
            let beam = gen_los(&b, est.aod, est.aoa, 0.0);
            let fit = beam.dotc(h.slice(0)).norm() / 64.0;
            assert!(fit > 1.0 - 1e-9, "{aod} {aoa}: {est:?} fit {fit}");
            assert!((est.aod - aod).abs() < 0.01 && (est.aoa - aoa).abs() < 0.01, "{est:?}");
        }
    }

    #[test]
    fn scaling_invariance() {
        let b = band(16);
        let cfg = DualBandConfig {
            sub6: b.clone(),
            mmw: BandConfig::new(25.5e9, 16.0 * 120e3, 120e3, 8, 8, 0.59e-6),
            ..Default::default()
        };
        let s = ScenarioDraw::new(0.4, -0.2, 3.0, 1.0, 0.0, 0.0, 10.0, 10.0).unwrap();
        let r = gen_channel(&cfg, &s, &mut RngStream::new(8)).unwrap();
        let base = estimate_angles(&r.h_sub6, &b, DEFAULT_ANGLE_GRID).unwrap();
        for c in [0.25, 2.0, 1024.0] {
            let est = estimate_angles(&r.h_sub6.scale(C64::new(c, 0.0)), &b, DEFAULT_ANGLE_GRID).unwrap();
            assert_eq!((est.aoa, est.aod), (base.aoa, base.aod));
        }
        let est = estimate_angles(&r.h_sub6.scale(C64::new(3.7, 0.0)), &b, DEFAULT_ANGLE_GRID).unwrap();
        assert!((est.aoa - base.aoa).abs() < 1e-7 && (est.aod - base.aod).abs() < 1e-7);
    }

    #[test]
    fn angle_accuracy_high_k() {
        let cfg = DualBandConfig::default();
        let grid = allocate_pilots(&cfg.sub6).unwrap();
        let mut rng = RngStream::new(2024);
        let trials = 500;
        let mut good = 0;
        for _ in 0..trials {
            let s = ScenarioDraw::new(
                rng.uniform(-FRAC_PI_2, FRAC_PI_2),
                rng.uniform(-FRAC_PI_2, FRAC_PI_2),
                1e9,
                1.0,
                rng.uniform(-3.0, 3.0),
                0.0,
                100.0,
                100.0,
            )
            .unwrap();
            let los = gen_los(&cfg.sub6, s.aod, s.aoa, s.phase_sub6);
            let h = ChannelTensor::repeat(&los, cfg.sub6.num_subcarriers);
            let y = simulate_training_step1(&h, &grid, 0.01, &mut rng).unwrap();
            let est = estimate_angles(&ls_estimate_interpolate(&y, &grid).unwrap(), &cfg.sub6, 181).unwrap();
            let err = (est.aoa - s.aoa).abs().max((est.aod - s.aod).abs()).to_degrees();
            if err < 2.0 {
                good += 1;
            }
        }
        assert!(good as f64 >= 0.95 * trials as f64, "{good}/{trials}");
    }

    #[test]
    fn k_factor_moments() {
        let mut rng = RngStream::new(77);
        // constant magnitude → clamp at the top
        let los = gen_los(&band(8), 0.3, 0.1, 0.0);
        let h = ChannelTensor::repeat(&los, 8);
        assert_eq!(estimate_k_factor(&h).unwrap(), K_FACTOR_MAX);

        let rayleigh = |rng: &mut RngStream, k: f64| {
            let (a, b) = crate::channel::rician_weights(k);
            let slices = (0..160)
                .map(|_| ComplexMatrix::from_fn(8, 8, |_, _| C64::from_polar(a, rng.uniform(-PI, PI)) + rng.cn(b * b)))
                .collect();
            ChannelTensor::new(slices).unwrap()
        };
        let k0 = estimate_k_factor(&rayleigh(&mut rng, 0.0)).unwrap();
        assert!(k0 < 0.1, "{k0}");
        let k1 = estimate_k_factor(&rayleigh(&mut rng, 1.0)).unwrap();
        assert!((k1 - 1.0).abs() < 0.2, "{k1}");

        let tiny = ChannelTensor::repeat(&ComplexMatrix::zeros(1, 1), 7);
        assert!(estimate_k_factor(&tiny).is_err());
        let zeros = ChannelTensor::zeros(8, 2, 2);
        assert_eq!(estimate_k_factor(&zeros).unwrap(), 0.0);
    }

    #[test]
    fn k_factor_rayleigh_clamps_to_zero() {
        // exponential powers with exactly v = m2² reach the γ̂ = 1 clamp
        let vals = [0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0];
        let m = ComplexMatrix::from_fn(1, 8, |_, c| C64::new(vals[c], 0.0));
        // |h|² ∈ {0, 4}: m2 = 2, var = 4 → γ̂ = 1
        assert_eq!(estimate_k_factor(&ChannelTensor::repeat(&m, 1)).unwrap(), 0.0);
    }

    #[test]
    fn mrc_weight_values() {
        let cfg = DualBandConfig::default();
        assert_eq!(mrc_weight(5.0, 0.0, &cfg), 0.0);
        assert!((mrc_weight(0.0, 1.0, &cfg) - 64.0 / 129.0).abs() < 1e-12);
        assert!((mrc_weight(f64::INFINITY, 1.0, &cfg) - 64.0 / 65.0).abs() < 1e-12);
        assert!((mrc_weight(1e15, 1.0, &cfg) - 64.0 / 65.0).abs() < 1e-12);
    }

    #[test]
    fn mrc_weight_monotone() {
        let cfg = DualBandConfig::default();
        let noise: Vec<f64> = (0..20).map(|i| 10f64.powf(-3.0 + 0.3 * i as f64)).collect();
        let ks: Vec<f64> = (0..20).map(|i| 10f64.powf(-2.0 + 0.3 * i as f64)).collect();
        for &k in &ks {
            for w in noise.windows(2) {
                let (a, b) = (mrc_weight(k, w[0], &cfg), mrc_weight(k, w[1], &cfg));
                assert!(b >= a && (0.0..1.0).contains(&b));
            }
        }
        for &s in &noise {
            for w in ks.windows(2) {
                assert!(mrc_weight(w[1], s, &cfg) >= mrc_weight(w[0], s, &cfg));
            }
        }
    }

    #[test]
    fn combine_cases() {
        let mut rng = RngStream::new(1);
        let a = ChannelTensor::new((0..4).map(|_| ComplexMatrix::from_fn(3, 2, |_, _| rng.cn(1.0))).collect()).unwrap();
        let b = ChannelTensor::new((0..4).map(|_| ComplexMatrix::from_fn(3, 2, |_, _| rng.cn(1.0))).collect()).unwrap();
        assert_eq!(mrc_combine(&a, &b, 0.0).unwrap().h, b);
        assert_eq!(mrc_combine(&a, &b, 1.0).unwrap().h, a);
        let neg = b.scale(C64::new(-1.0, 0.0));
        assert!(mrc_combine(&neg, &b, 0.5).unwrap().h.energy() < 1e-30);
        assert!(mrc_combine(&a, &b, 1.5).is_err());
        assert!(mrc_combine(&a, &ChannelTensor::zeros(3, 3, 2), 0.5).is_err());

        for t in [&a, &b, &neg] {
            let e = baseline_inband(t);
            assert_eq!((&e.h, e.method), (t, Method::NonMl));
            let p = baseline_perfect(t);
            assert_eq!(p.method, Method::Perfect);
            let err: f64 = p.h.iter().zip(t.iter()).map(|(x, y)| frobenius_sq(&(x - y))).sum();
            assert_eq!(err, 0.0);
        }
    }

    /// Error statistics the MRC factor is derived for: in-band error σ² per
    /// entry, out-of-band error σ²/M (array gain only). There ŵ is the
    /// MSE-optimal convex weight, so MRC beats both inputs.
    #[test]
    fn mrc_combining_gain_model_regime() {
        let cfg = DualBandConfig::default();
        let mmw = &cfg.mmw;
        let m = mmw.num_links() as f64;
        let mut rng = RngStream::new(31);
        for var in [0.01, 0.1, 1.0] {
            let w = mrc_weight(f64::INFINITY, var, &cfg);
            let (mut e_in, mut e_oob, mut e_mrc) = (0.0, 0.0, 0.0);
            for _ in 0..500 {
                let (aod, aoa) = (rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
                let h = gen_los(mmw, aod, aoa, rng.uniform(-3.0, 3.0));
                let inband = h.map(|v| v + rng.cn(var));
                let oob = h.map(|v| v + rng.cn(var / m));
                let mrc = &oob * C64::new(w, 0.0) + &inband * C64::new(1.0 - w, 0.0);
                e_in += frobenius_sq(&(&h - inband));
                e_oob += frobenius_sq(&(&h - oob));
                e_mrc += frobenius_sq(&(&h - mrc));
            }
            assert!(e_mrc <= 1.1 * e_in.min(e_oob), "var {var}: {e_mrc} vs {e_in} / {e_oob}");
        }
    }

    /// Full training pipeline on a flat LOS channel with exact angles: the
    /// combined estimate is never worse than the in-band one.
    #[test]
    fn mrc_pipeline_improves_on_inband() {
        use crate::pilot::{estimate_beamformed, los_delay_filter, reconstruct_oob_estimate, simulate_training_step2};
        let mmw = BandConfig::new(25.5e9, 64.0 * 120e3, 120e3, 8, 8, 0.59e-6);
        let cfg = DualBandConfig {
            sub6: band(64),
            mmw: mmw.clone(),
            ..Default::default()
        };
        let grid = allocate_pilots(&mmw).unwrap();
        let mut rng = RngStream::new(31);
        for var in [0.01, 0.1, 1.0] {
            let (mut e_in, mut e_mrc) = (0.0, 0.0);
            for _ in 0..200 {
                let (aod, aoa) = (rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
                let h = ChannelTensor::repeat(&gen_los(&mmw, aod, aoa, rng.uniform(-3.0, 3.0)), 64);
                let y = simulate_training_step1(&h, &grid, var, &mut rng).unwrap();
                let inband = ls_estimate_interpolate(&y, &grid).unwrap();
                let y2 = simulate_training_step2(&h, &mmw, aoa, aod, var, &mut rng).unwrap();
                let g = los_delay_filter(&estimate_beamformed(&y2, aoa, aod).gains).unwrap();
                let oob = reconstruct_oob_estimate(&g, &mmw, aoa, aod).unwrap();
                let k = estimate_k_factor(&inband).unwrap();
                let mrc = mrc_combine(&oob, &inband, mrc_weight(k, var, &cfg)).unwrap();
                let mse = |e: &ChannelTensor| -> f64 {
                    h.iter().zip(e.iter()).map(|(a, b)| frobenius_sq(&(a - b))).sum::<f64>()
                };
                e_in += mse(&inband);
                e_mrc += mse(&mrc.h);
            }
            assert!(e_mrc < e_in, "var {var}: {e_mrc} vs {e_in}");
        }
    }
}
