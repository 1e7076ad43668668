//! Two-step training phase.
//!
//! Step 1 sends non-precoded comb pilots on both bands (antenna `t` owns every
//! `M_Tx`-th subcarrier) and recovers `H̃[n]` by LS plus linear interpolation.
//! Step 2 beams a single pilot stream along the angles estimated on sub-6 GHz,
//! keeps only the zero-delay tap of the scalar beamformed channel, and
//! rebuilds a rank-1 mmWave estimate from it.

use crate::channel::{steering_rx, steering_tx};
use crate::config::BandConfig;
use crate::dft::{delay_to_freq, freq_to_delay};
use crate::error::{Error, Result};
use crate::linalg::{ChannelTensor, ComplexMatrix, ComplexVector, C64, ONE, ZERO};
use crate::rng::RngStream;

/// Comb pilot allocation. Indices here are 0-based: antenna `t` transmits on
/// subcarriers `t, t + M_Tx, t + 2·M_Tx, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotGrid {
    num_tx: usize,
    values: Vec<C64>,
}

impl PilotGrid {
    pub fn num_tx(&self) -> usize {
        self.num_tx
    }

    pub fn num_subcarriers(&self) -> usize {
        self.values.len()
    }

    /// Pilot symbol φ[n].
    pub fn value(&self, n: usize) -> C64 {
        self.values[n]
    }

    pub fn active_antenna(&self, n: usize) -> Option<usize> {
        (n < self.values.len()).then_some(n % self.num_tx)
    }

    pub fn pilot_indices(&self, antenna: usize) -> Vec<usize> {
        (antenna..self.values.len()).step_by(self.num_tx).collect()
    }

    /// Transmit vector φ[n]: the pilot on the active antenna, zero elsewhere.
    pub fn transmit_vector(&self, n: usize) -> ComplexVector {
        let mut v = ComplexVector::zeros(self.num_tx);
        v[n % self.num_tx] = self.values[n];
        v
    }
}

pub fn allocate_pilots(band: &BandConfig) -> Result<PilotGrid> {
    if band.num_tx == 0 || band.num_subcarriers < band.num_tx {
        return Err(Error::InvalidArgument(format!(
            "{} subcarriers cannot carry comb pilots for {} antennas",
            band.num_subcarriers, band.num_tx
        )));
    }
    Ok(PilotGrid {
        num_tx: band.num_tx,
        values: vec![ONE; band.num_subcarriers],
    })
}

fn check_noise(noise_var: f64) -> Result<()> {
    if noise_var >= 0.0 && noise_var.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {noise_var}")))
    }
}

fn noise_vector(len: usize, noise_var: f64, rng: &mut RngStream) -> ComplexVector {
    if noise_var == 0.0 {
        ComplexVector::zeros(len)
    } else {
        ComplexVector::from_iterator(len, (0..len).map(|_| rng.cn(noise_var)))
    }
}

/// `y[n] = H[n] φ[n] + w[n]`, `w ~ CN(0, σ² I)`.
pub fn simulate_training_step1(
    h: &ChannelTensor,
    grid: &PilotGrid,
    noise_var: f64,
    rng: &mut RngStream,
) -> Result<Vec<ComplexVector>> {
    check_noise(noise_var)?;
    if h.len() != grid.num_subcarriers() || h.cols() != grid.num_tx() {
        return Err(Error::dims(
            format!("{} subcarriers x {} tx", grid.num_subcarriers(), grid.num_tx()),
            format!("{} subcarriers x {} tx", h.len(), h.cols()),
        ));
    }
    Ok(h.iter()
        .enumerate()
        .map(|(n, hn)| {
            let t = n % grid.num_tx;
            hn.column(t) * grid.value(n) + noise_vector(h.rows(), noise_var, rng)
        })
        .collect())
}

/// LS at each antenna's pilot subcarriers, then linear interpolation of the
/// real and imaginary parts across subcarrier index. Positions outside the
/// first/last pilot hold the nearest estimate.
pub fn ls_estimate_interpolate(received: &[ComplexVector], grid: &PilotGrid) -> Result<ChannelTensor> {
    let n_sc = grid.num_subcarriers();
    if received.len() != n_sc {
        return Err(Error::dims(n_sc, received.len()));
    }
    let rows = received[0].len();
    if received.iter().any(|y| y.len() != rows) {
        return Err(Error::InvalidArgument("received vectors differ in length".into()));
    }
    let mut slices = vec![ComplexMatrix::zeros(rows, grid.num_tx()); n_sc];
    for t in 0..grid.num_tx() {
        let pilots = grid.pilot_indices(t);
        let est: Vec<ComplexVector> = pilots.iter().map(|&p| &received[p] / grid.value(p)).collect();
        let mut k = 0;
        for (n, slice) in slices.iter_mut().enumerate() {
            while k + 1 < pilots.len() && pilots[k + 1] <= n {
                k += 1;
            }
            let col = if n <= pilots[0] {
                est[0].clone()
            } else if k + 1 == pilots.len() {
                est[k].clone()
            } else {
                let alpha = (n - pilots[k]) as f64 / (pilots[k + 1] - pilots[k]) as f64;
                &est[k] * C64::new(1.0 - alpha, 0.0) + &est[k + 1] * C64::new(alpha, 0.0)
            };
            slice.set_column(t, &col);
        }
    }
    ChannelTensor::new(slices)
}

/// `y[n] = a_rx(φ̃)^H H[n] a_tx(ϑ̃) φ[n] + a_rx(φ̃)^H w[n]` with a unit pilot on every subcarrier.
pub fn simulate_training_step2(
    h: &ChannelTensor,
    band: &BandConfig,
    aoa: f64,
    aod: f64,
    noise_var: f64,
    rng: &mut RngStream,
) -> Result<Vec<C64>> {
    check_noise(noise_var)?;
    if !aoa.is_finite() || !aod.is_finite() {
        return Err(Error::InvalidArgument("beam angles must be finite".into()));
    }
    if (h.rows(), h.cols()) != (band.num_rx, band.num_tx) {
        return Err(Error::dims(
            format!("{}x{}", band.num_rx, band.num_tx),
            format!("{}x{}", h.rows(), h.cols()),
        ));
    }
    let a_rx = steering_rx(band, aoa);
    let a_tx = steering_tx(band, aod);
    let pilot = ONE;
    Ok(h.iter()
        .map(|hn| {
            let gain = a_rx.dotc(&(hn * &a_tx));
            let w = noise_vector(band.num_rx, noise_var, rng);
            gain * pilot + a_rx.dotc(&w)
        })
        .collect())
}

/// Effective beamformed scalar channel Ĝ[n] and the beam it was measured with.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformedScalarEstimate {
    pub gains: Vec<C64>,
    pub aoa: f64,
    pub aod: f64,
}

/// LS on the step-2 pilots. With a pilot on every subcarrier interpolation is the identity.
pub fn estimate_beamformed(received: &[C64], aoa: f64, aod: f64) -> BeamformedScalarEstimate {
    BeamformedScalarEstimate {
        gains: received.iter().map(|y| y / ONE).collect(),
        aoa,
        aod,
    }
}

/// Keeps only delay tap 0. The output is constant across subcarriers.
pub fn los_delay_filter(gains: &[C64]) -> Result<Vec<C64>> {
    let mut taps = freq_to_delay(gains)?;
    taps.iter_mut().skip(1).for_each(|t| *t = ZERO);
    delay_to_freq(&taps)
}

/// `Ĥ[n] = a_rx(φ̃) Ĝ_LOS[n] a_tx(ϑ̃)^H / (M_Rx·M_Tx)`.
///
/// The division undoes the array gain `a^H a = M` picked up on each side in step 2.
pub fn reconstruct_oob_estimate(g_los: &[C64], band: &BandConfig, aoa: f64, aod: f64) -> Result<ChannelTensor> {
    if g_los.is_empty() {
        return Err(Error::InvalidArgument("empty LOS gain sequence".into()));
    }
    let a_rx = steering_rx(band, aoa);
    let a_tx = steering_tx(band, aod);
    let outer = (a_rx * a_tx.adjoint()) / C64::new(band.num_links() as f64, 0.0);
    ChannelTensor::new(g_los.iter().map(|g| &outer * *g).collect())
}
