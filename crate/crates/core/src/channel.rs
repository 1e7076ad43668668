//! Dual-band frequency-selective Rician channel generation.
//!
//! Per band, `H[n] = √(K/(1+K))·H_fs + √(1/(1+K))·H_rp[n]` with unit path gain.
//! The LOS part `H_fs = e^{jχ} a_rx(φ) a_tx(ϑ)^H` is shared geometry across
//! bands; the diffuse part is a clustered tapped-delay-line drawn independently
//! per band:
//!
//! `H_rp[n] = Σ_c g_c √p_c a_rx(φ_c) a_tx(ϑ_c)^H e^{-j2π n Δf τ_c}`,  `g_c ~ CN(0,1)`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::config::{BandConfig, DualBandConfig};
use crate::error::{Error, Result};
use crate::linalg::{ChannelTensor, ComplexMatrix, ComplexVector, C64};
use crate::rng::RngStream;

/// ULA response `[1, e^{-j2π r u}, …, e^{-j2π (M-1) r u}]` for `u = sin θ`, `r = Δd/λ`.
pub fn steering_from_sin(num: usize, spacing_ratio: f64, sin_angle: f64) -> ComplexVector {
    ComplexVector::from_iterator(
        num,
        (0..num).map(|m| C64::from_polar(1.0, -2.0 * PI * m as f64 * spacing_ratio * sin_angle)),
    )
}

pub fn steering_tx(band: &BandConfig, aod: f64) -> ComplexVector {
    steering_from_sin(band.num_tx, band.spacing_ratio(), aod.sin())
}

pub fn steering_rx(band: &BandConfig, aoa: f64) -> ComplexVector {
    steering_from_sin(band.num_rx, band.spacing_ratio(), aoa.sin())
}

/// Free-space LOS matrix `e^{jχ} a_rx(φ) a_tx(ϑ)^H`.
pub fn gen_los(band: &BandConfig, aod: f64, aoa: f64, phase: f64) -> ComplexMatrix {
    let a_rx = steering_rx(band, aoa);
    let a_tx = steering_tx(band, aod);
    (a_rx * a_tx.adjoint()) * C64::from_polar(1.0, phase)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cluster {
    /// s
    pub delay: f64,
    pub power: f64,
    pub aod: f64,
    pub aoa: f64,
    pub gain: C64,
}

/// Diffuse clusters of one band. Powers sum to one; delays lie within the cyclic prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn new(clusters: Vec<Cluster>, band: &BandConfig) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::InvalidArgument("cluster set is empty".into()));
        }
        let total: f64 = clusters.iter().map(|c| c.power).sum();
        if (total - 1.0).abs() > 1e-9 || clusters.iter().any(|c| c.power < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cluster powers must be non-negative and sum to 1, got {total}"
            )));
        }
        if let Some(c) = clusters
            .iter()
            .find(|c| !(c.delay >= 0.0 && c.delay <= band.cyclic_prefix))
        {
            return Err(Error::InvalidArgument(format!(
                "cluster delay {} s outside [0, t_CP = {} s]",
                c.delay, band.cyclic_prefix
            )));
        }
        Ok(ClusterSet { clusters })
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }
}

/// Statistics of the clustered diffuse model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub num_clusters: usize,
    /// Mean of the exponential delay distribution, s.
    pub rms_delay_spread: f64,
}

impl Default for ClusterProfile {
    fn default() -> Self {
        ClusterProfile {
            num_clusters: 20,
            rms_delay_spread: 100e-9,
        }
    }
}

impl ClusterProfile {
    /// Exponential delays truncated at t_CP (by redraw), powers `∝ e^{-τ/DS}`,
    /// angles uniform on [-π/2, π/2], gains CN(0, 1).
    pub fn draw(&self, band: &BandConfig, rng: &mut RngStream) -> Result<ClusterSet> {
        if self.num_clusters == 0 || !(self.rms_delay_spread > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid cluster profile {self:?}")));
        }
        let mut clusters = Vec::with_capacity(self.num_clusters);
        for _ in 0..self.num_clusters {
            let delay = loop {
                let d = rng.exponential(self.rms_delay_spread);
                if d <= band.cyclic_prefix {
                    break d;
                }
            };
            clusters.push(Cluster {
                delay,
                power: (-delay / self.rms_delay_spread).exp(),
                aod: rng.uniform(-FRAC_PI_2, FRAC_PI_2),
                aoa: rng.uniform(-FRAC_PI_2, FRAC_PI_2),
                gain: rng.cn(1.0),
            });
        }
        let total: f64 = clusters.iter().map(|c| c.power).sum();
        clusters.iter_mut().for_each(|c| c.power /= total);
        ClusterSet::new(clusters, band)
    }
}

pub fn gen_rayleigh(band: &BandConfig, clusters: &ClusterSet) -> Result<ChannelTensor> {
    for c in clusters.clusters() {
        if c.delay > band.cyclic_prefix || c.delay < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cluster delay {} s outside [0, t_CP = {} s]",
                c.delay, band.cyclic_prefix
            )));
        }
    }
    let spatial: Vec<ComplexMatrix> = clusters
        .clusters()
        .iter()
        .map(|c| gen_los(band, c.aod, c.aoa, 0.0) * (c.gain * c.power.sqrt()))
        .collect();
    let slices = (0..band.num_subcarriers)
        .map(|n| {
            let mut h = ComplexMatrix::zeros(band.num_rx, band.num_tx);
            for (c, m) in clusters.clusters().iter().zip(&spatial) {
                let rot = C64::from_polar(1.0, -2.0 * PI * n as f64 * band.subcarrier_spacing * c.delay);
                h.zip_apply(m, |acc, v| *acc += v * rot);
            }
            h
        })
        .collect();
    ChannelTensor::new(slices)
}

/// Drawn scenario parameters shared by both bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDraw {
    pub aod: f64,
    pub aoa: f64,
    pub k_sub6: f64,
    pub k_mmw: f64,
    pub phase_sub6: f64,
    pub phase_mmw: f64,
    /// Pre-beamforming SNR, linear.
    pub snr_mmw: f64,
    pub snr_sub6: f64,
}

impl ScenarioDraw {
    /// `k_mmw` is derived as `k_scale · k_sub6`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        aod: f64,
        aoa: f64,
        k_sub6: f64,
        k_scale: f64,
        phase_sub6: f64,
        phase_mmw: f64,
        snr_mmw: f64,
        snr_sub6: f64,
    ) -> Result<Self> {
        let angle_ok = |a: f64| (-FRAC_PI_2..=FRAC_PI_2).contains(&a);
        let phase_ok = |p: f64| (-PI..=PI).contains(&p);
        if !angle_ok(aod) || !angle_ok(aoa) {
            return Err(Error::InvalidArgument(format!(
                "angles must lie in [-pi/2, pi/2], got aod {aod}, aoa {aoa}"
            )));
        }
        if !phase_ok(phase_sub6) || !phase_ok(phase_mmw) {
            return Err(Error::InvalidArgument("LOS phases must lie in [-pi, pi]".into()));
        }
        if !(k_sub6 >= 0.0) || !(k_scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "K-factor must be >= 0 and k_scale > 0, got {k_sub6}, {k_scale}"
            )));
        }
        if !(snr_mmw > 0.0) || !(snr_sub6 > 0.0) {
            return Err(Error::InvalidArgument("SNR must be > 0".into()));
        }
        Ok(ScenarioDraw {
            aod,
            aoa,
            k_sub6,
            k_mmw: k_scale * k_sub6,
            phase_sub6,
            phase_mmw,
            snr_mmw,
            snr_sub6,
        })
    }

    /// Noise variance σ_w² = 1/γ of the mmWave band.
    pub fn noise_mmw(&self) -> f64 {
        1.0 / self.snr_mmw
    }

    pub fn noise_sub6(&self) -> f64 {
        1.0 / self.snr_sub6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub scenario: ScenarioDraw,
    pub h_sub6: ChannelTensor,
    pub h_mmw: ChannelTensor,
}

impl ChannelRealization {
    pub fn los_sub6(&self, cfg: &DualBandConfig) -> ComplexMatrix {
        let s = &self.scenario;
        gen_los(&cfg.sub6, s.aod, s.aoa, s.phase_sub6)
    }

    pub fn los_mmw(&self, cfg: &DualBandConfig) -> ComplexMatrix {
        let s = &self.scenario;
        gen_los(&cfg.mmw, s.aod, s.aoa, s.phase_mmw)
    }
}

/// `(√(K/(1+K)), √(1/(1+K)))`, with the K → ∞ limit handled.
pub fn rician_weights(k: f64) -> (f64, f64) {
    if k.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k / (1.0 + k)).sqrt(), (1.0 / (1.0 + k)).sqrt())
    }
}

fn rician_band(
    band: &BandConfig,
    los: &ComplexMatrix,
    k: f64,
    clusters: &ClusterSet,
) -> Result<ChannelTensor> {
    let diffuse = gen_rayleigh(band, clusters)?;
    let (a, b) = rician_weights(k);
    let los = los * C64::new(a, 0.0);
    let b = C64::new(b, 0.0);
    ChannelTensor::new(diffuse.into_slices().into_iter().map(|h| &los + h * b).collect())
}

pub fn gen_channel(cfg: &DualBandConfig, scenario: &ScenarioDraw, rng: &mut RngStream) -> Result<ChannelRealization> {
    gen_channel_with(cfg, &ClusterProfile::default(), scenario, rng)
}

/// Sub-6 and mmWave diffuse parts come from two forked, independent streams.
pub fn gen_channel_with(
    cfg: &DualBandConfig,
    profile: &ClusterProfile,
    scenario: &ScenarioDraw,
    rng: &mut RngStream,
) -> Result<ChannelRealization> {
    let mut rng_sub6 = rng.fork();
    let mut rng_mmw = rng.fork();
    let s = scenario;
    let clusters_sub6 = profile.draw(&cfg.sub6, &mut rng_sub6)?;
    let clusters_mmw = profile.draw(&cfg.mmw, &mut rng_mmw)?;
    let los_sub6 = gen_los(&cfg.sub6, s.aod, s.aoa, s.phase_sub6);
    let los_mmw = gen_los(&cfg.mmw, s.aod, s.aoa, s.phase_mmw);
    Ok(ChannelRealization {
        scenario: *scenario,
        h_sub6: rician_band(&cfg.sub6, &los_sub6, s.k_sub6, &clusters_sub6)?,
        h_mmw: rician_band(&cfg.mmw, &los_mmw, s.k_mmw, &clusters_mmw)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_sq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn small_band(n: usize, m: usize) -> BandConfig {
        BandConfig::new(25.5e9, n as f64 * 120e3, 120e3, m, m, 0.59e-6)
    }

    fn scenario(k: f64) -> ScenarioDraw {
        ScenarioDraw::new(0.3, -0.7, k, 1.0, 0.4, -1.1, 10.0, 100.0).unwrap()
    }

    #[test]
    fn steering_examples() {
        let band = small_band(16, 2);
        assert!(steering_tx(&band, 0.0).iter().all(|v| (v - c(1.0, 0.0)).norm() < 1e-15));
        let a = steering_tx(&band, FRAC_PI_2);
        assert!((a[1] - c(-1.0, 0.0)).norm() < 1e-12);
        let a = steering_tx(&band, PI / 6.0);
        assert!((a[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((a[1] - c(0.0, -1.0)).norm() < 1e-12);
        let a = steering_rx(&band, PI / 6.0);
        assert!((a[1] - c(0.0, -1.0)).norm() < 1e-12);
        let band = BandConfig::mmw_default();
        assert!((steering_rx(&band, 0.77).norm_squared() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn los_properties() {
        let band = BandConfig::mmw_default();
        let h = gen_los(&band, 0.0, 0.0, 0.0);
        assert!(h.iter().all(|v| (v - c(1.0, 0.0)).norm() < 1e-15));

        let h = gen_los(&band, 0.41, -1.2, 2.0);
        assert!(h.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        assert!((frobenius_sq(&h) - 64.0).abs() < 1e-10);
        let sv = h.clone().singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((sv[0] - 8.0).abs() < 1e-10);
        assert!(sv[1] < 1e-12 * sv[0]);
    }

    #[test]
    fn cluster_validation() {
        let band = small_band(16, 2);
        let ok = Cluster {
            delay: 0.0,
            power: 1.0,
            aod: 0.0,
            aoa: 0.0,
            gain: c(1.0, 0.0),
        };
        assert!(ClusterSet::new(vec![ok], &band).is_ok());
        let late = Cluster { delay: 1e-6, ..ok };
        assert!(ClusterSet::new(vec![late], &band).is_err());
        let weak = Cluster { power: 0.5, ..ok };
        assert!(ClusterSet::new(vec![weak], &band).is_err());

        let mut rng = RngStream::new(5);
        let set = ClusterProfile::default().draw(&band, &mut rng).unwrap();
        assert_eq!(set.clusters().len(), 20);
        let total: f64 = set.clusters().iter().map(|c| c.power).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(set.clusters().iter().all(|c| c.delay <= band.cyclic_prefix));
    }

    #[test]
    fn single_cluster_zero_delay_is_flat() {
        let band = small_band(16, 4);
        let set = ClusterSet::new(
            vec![Cluster {
                delay: 0.0,
                power: 1.0,
                aod: 0.2,
                aoa: -0.4,
                gain: c(0.3, -0.8),
            }],
            &band,
        )
        .unwrap();
        let h = gen_rayleigh(&band, &set).unwrap();
        assert_eq!(h.len(), 16);
        assert!(h.iter().all(|m| m == h.slice(0)));
    }

    #[test]
    fn rayleigh_ensemble_power() {
        let band = small_band(16, 8);
        let mut rng = RngStream::new(11);
        let draws = 10_000;
        let (mut p0, mut p9) = (0.0, 0.0);
        for _ in 0..draws {
            let set = ClusterProfile::default().draw(&band, &mut rng).unwrap();
            let h = gen_rayleigh(&band, &set).unwrap();
            p0 += frobenius_sq(h.slice(0)) / 64.0;
            p9 += frobenius_sq(h.slice(9)) / 64.0;
        }
        let (p0, p9) = (p0 / draws as f64, p9 / draws as f64);
        assert!((p0 - 1.0).abs() < 0.05, "{p0}");
        assert!((p9 - 1.0).abs() < 0.05, "{p9}");
    }

    #[test]
    fn independent_draws_uncorrelated() {
        let band = small_band(16, 8);
        let profile = ClusterProfile::default();
        let (mut cross, mut pa, mut pb) = (c(0.0, 0.0), 0.0, 0.0);
        for i in 0..2_000 {
            let a = gen_rayleigh(&band, &profile.draw(&band, &mut RngStream::derive(1, i)).unwrap()).unwrap();
            let b = gen_rayleigh(&band, &profile.draw(&band, &mut RngStream::derive(2, i)).unwrap()).unwrap();
            for (x, y) in a.slice(3).iter().zip(b.slice(3).iter()) {
                cross += x * y.conj();
                pa += x.norm_sqr();
                pb += y.norm_sqr();
            }
        }
        let rho = cross.norm() / (pa * pb).sqrt();
        assert!(rho < 0.05, "correlation {rho}");
    }

    #[test]
    fn rician_limits() {
        let cfg = DualBandConfig {
            sub6: BandConfig::new(2.55e9, 32.0 * 60e3, 60e3, 8, 8, 1.19e-6),
            mmw: small_band(64, 8),
            ..Default::default()
        };
        let s = scenario(1e9);
        let r = gen_channel(&cfg, &s, &mut RngStream::new(3)).unwrap();
        let los = r.los_mmw(&cfg);
        for h in r.h_mmw.iter() {
            let rel = (frobenius_sq(&(h - &los)) / frobenius_sq(&los)).sqrt();
            assert!(rel < 1e-4, "{rel}");
        }

        let s0 = scenario(0.0);
        let r0 = gen_channel(&cfg, &s0, &mut RngStream::new(3)).unwrap();
        // same stream → identical diffuse draws; K = 0 leaves them untouched
        let mut rng = RngStream::new(3);
        let _ = rng.fork();
        let mut rng_mmw = rng.fork();
        let set = ClusterProfile::default().draw(&cfg.mmw, &mut rng_mmw).unwrap();
        let diffuse = gen_rayleigh(&cfg.mmw, &set).unwrap();
        assert_eq!(r0.h_mmw, diffuse);
    }

    #[test]
    fn rician_variance_split_and_k_recovery() {
        let cfg = DualBandConfig {
            sub6: BandConfig::new(2.55e9, 8.0 * 60e3, 60e3, 8, 8, 1.19e-6),
            mmw: small_band(8, 8),
            ..Default::default()
        };
        for k in [1.0, 4.0] {
            let s = scenario(k);
            let los = gen_los(&cfg.mmw, s.aod, s.aoa, s.phase_mmw);
            let (a, _) = rician_weights(k);
            let scaled = &los * C64::new(a, 0.0);
            let draws = 10_000;
            let (mut diffuse, mut total) = (0.0, 0.0);
            let mut cross = 0.0;
            for i in 0..draws {
                let r = gen_channel(&cfg, &s, &mut RngStream::derive(9, i)).unwrap();
                let h = r.h_mmw.slice(2);
                diffuse += frobenius_sq(&(h - &scaled));
                total += frobenius_sq(h);
                let hs = r.h_sub6.slice(2) - r.los_sub6(&cfg) * C64::new(a, 0.0);
                let hm = h - &scaled;
                cross += hs.iter().zip(hm.iter()).map(|(x, y)| x * y.conj()).sum::<C64>().re;
            }
            let diffuse = diffuse / draws as f64;
            let expected = 64.0 / (1.0 + k);
            assert!((diffuse - expected).abs() < 0.05 * expected, "K={k}: {diffuse}");
            assert!((total / draws as f64 - 64.0).abs() < 0.05 * 64.0);
            // empirical K = LOS power / diffuse power
            let k_hat = (a * a * 64.0) / diffuse;
            assert!((k_hat - k).abs() < 0.1 * k, "K={k}: {k_hat}");
            // normalised cross-band correlation of the diffuse parts
            let rho = (cross / draws as f64).abs() / expected;
            assert!(rho < 0.05, "{rho}");
        }
    }

    #[test]
    fn scenario_ranges() {
        assert!(ScenarioDraw::new(2.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(ScenarioDraw::new(0.0, 0.0, 1.0, 1.0, 4.0, 0.0, 1.0, 1.0).is_err());
        let s = ScenarioDraw::new(0.0, 0.0, 3.0, 2.5, 0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(s.k_mmw, 7.5);
    }
}
