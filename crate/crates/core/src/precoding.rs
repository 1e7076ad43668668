//! SVD precoding with water-filling, and the effective-SINR / SE link metrics.

use crate::error::{Error, Result};
use crate::linalg::{ChannelTensor, ComplexMatrix, ONE, ZERO};

const WATERFILL_ITERATIONS: usize = 200;

/// Compact SVD `H = Q Σ F^H`, `ℓ = min(M_Rx, M_Tx)` columns, σ descending.
///
/// SVD is unique only up to a unit phase per singular pair; the first
/// entry of maximal magnitude in each `F` column is made real and
/// non-negative (and the matching `Q` column rotated alike).
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub q: ComplexMatrix,
    pub sigma: Vec<f64>,
    pub f: ComplexMatrix,
}

pub fn svd_compact(h: &ComplexMatrix) -> Result<Svd> {
    let (rows, cols) = h.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("empty channel matrix".into()));
    }
    if h.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::InvalidArgument("channel matrix has non-finite entries".into()));
    }
    let l = rows.min(cols);
    if h.iter().all(|v| *v == ZERO) {
        return Ok(Svd {
            q: ComplexMatrix::identity(rows, l),
            sigma: vec![0.0; l],
            f: ComplexMatrix::identity(cols, l),
        });
    }
    let svd = h.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V^H").adjoint();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut q = ComplexMatrix::zeros(rows, l);
    let mut f = ComplexMatrix::zeros(cols, l);
    let mut sigma = Vec::with_capacity(l);
    for (k, &src) in order.iter().enumerate() {
        let fc = v.column(src);
        let peak = fc.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let pivot = fc
            .iter()
            .find(|x| x.norm() >= peak * (1.0 - 1e-9))
            .copied()
            .unwrap_or(ONE);
        let rot = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { ONE };
        f.set_column(k, &(fc * rot));
        q.set_column(k, &(u.column(src) * rot));
        sigma.push(svd.singular_values[src].max(0.0));
    }
    Ok(Svd { q, sigma, f })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterFilling {
    pub powers: Vec<f64>,
    /// Water level ν (NaN for the degenerate fallback).
    pub level: f64,
    /// All singular values were zero; power was split equally.
    pub degenerate: bool,
}

/// `p_μ = max(0, ν − σ_w²/σ_μ²)` with `Σ p = P_T`; ν by bisection on
/// `[0, P_T + max threshold]`, then solved exactly on the resulting active set.
pub fn waterfill(sigma: &[f64], noise_var: f64, total_power: f64) -> Result<WaterFilling> {
    if sigma.is_empty() {
        return Err(Error::InvalidArgument("no streams to load".into()));
    }
    if sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument("singular values must be finite and >= 0".into()));
    }
    if !(noise_var >= 0.0) || !(total_power > 0.0) || !total_power.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need noise variance >= 0 and P_T > 0, got {noise_var}, {total_power}"
        )));
    }
    if sigma.iter().all(|s| *s == 0.0) {
        return Ok(WaterFilling {
            powers: vec![total_power / sigma.len() as f64; sigma.len()],
            level: f64::NAN,
            degenerate: true,
        });
    }
    let thresholds: Vec<f64> = sigma
        .iter()
        .map(|s| if *s > 0.0 { noise_var / (s * s) } else { f64::INFINITY })
        .collect();
    let filled = |nu: f64| -> f64 { thresholds.iter().map(|t| (nu - t).max(0.0)).sum() };
    let max_finite = thresholds.iter().copied().filter(|t| t.is_finite()).fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, total_power + max_finite);
    for _ in 0..WATERFILL_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if filled(mid) > total_power {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let bracket = 0.5 * (lo + hi);
    // exact level on the active set found above
    let active: Vec<usize> = (0..thresholds.len()).filter(|&i| thresholds[i] < bracket).collect();
    let level = (total_power + active.iter().map(|&i| thresholds[i]).sum::<f64>()) / active.len() as f64;
    let powers = thresholds.iter().map(|t| (level - t).max(0.0)).collect();
    Ok(WaterFilling {
        powers,
        level,
        degenerate: false,
    })
}

/// Precoder, combiner and power loading designed on one channel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    pub q: ComplexMatrix,
    pub f: ComplexMatrix,
    pub sigma: Vec<f64>,
    pub powers: Vec<f64>,
}

pub fn design_precoder(h: &ComplexMatrix, noise_var: f64, total_power: f64) -> Result<Precoder> {
    let svd = svd_compact(h)?;
    let wf = waterfill(&svd.sigma, noise_var, total_power)?;
    Ok(Precoder {
        q: svd.q,
        f: svd.f,
        sigma: svd.sigma,
        powers: wf.powers,
    })
}

/// `G = Q^H H F P^{1/2}`
pub fn channel_gain(q: &ComplexMatrix, h: &ComplexMatrix, f: &ComplexMatrix, powers: &[f64]) -> Result<ComplexMatrix> {
    if q.nrows() != h.nrows() || f.nrows() != h.ncols() || f.ncols() != powers.len() {
        return Err(Error::dims(
            format!("Q {}x_, H {}x{}, F {}x{}", h.nrows(), h.nrows(), h.ncols(), h.ncols(), powers.len()),
            format!(
                "Q {}x{}, H {}x{}, F {}x{}",
                q.nrows(),
                q.ncols(),
                h.nrows(),
                h.ncols(),
                f.nrows(),
                f.ncols()
            ),
        ));
    }
    let mut g = q.ad_mul(&(h * f));
    for (j, p) in powers.iter().enumerate() {
        g.column_mut(j).scale_mut(p.max(0.0).sqrt());
    }
    Ok(g)
}

/// `σ_μ² = (1/ℓ) Σ_ν |E_μν|²`, `E = G − G_ideal`.
pub fn error_covariance(g: &ComplexMatrix, g_ideal: &ComplexMatrix) -> Result<Vec<f64>> {
    if g.shape() != g_ideal.shape() {
        return Err(Error::dims(format!("{:?}", g_ideal.shape()), format!("{:?}", g.shape())));
    }
    let l = g.ncols() as f64;
    Ok((0..g.nrows())
        .map(|mu| (0..g.ncols()).map(|nu| (g[(mu, nu)] - g_ideal[(mu, nu)]).norm_sqr()).sum::<f64>() / l)
        .collect())
}

/// `SINR_μ = |G_μμ|² / (Σ_{ν≠μ} |G_μν|² + (σ_μ² + σ_w²) ‖Q_{:,μ}‖²)`
pub fn sinr(g: &ComplexMatrix, err_var: &[f64], noise_var: f64, q: &ComplexMatrix) -> Result<Vec<f64>> {
    let l = g.nrows();
    if g.ncols() != l || err_var.len() != l || q.ncols() != l {
        return Err(Error::dims(
            format!("{l}x{l} gain, {l} error variances, {l} combiner columns"),
            format!("{}x{} gain, {}, {}", g.nrows(), g.ncols(), err_var.len(), q.ncols()),
        ));
    }
    Ok((0..l)
        .map(|mu| {
            let signal = g[(mu, mu)].norm_sqr();
            let interference: f64 = (0..l).filter(|&nu| nu != mu).map(|nu| g[(mu, nu)].norm_sqr()).sum();
            let denom = interference + (err_var[mu] + noise_var) * q.column(mu).norm_squared();
            if signal == 0.0 {
                0.0
            } else {
                signal / denom
            }
        })
        .collect())
}

/// `(1/N) Σ_n Σ_μ log₂(1 + SINR_μ[n])`
pub fn spectral_efficiency(sinrs: &[Vec<f64>]) -> f64 {
    if sinrs.is_empty() {
        return 0.0;
    }
    let total: f64 = sinrs.iter().map(|s| s.iter().map(|x| (1.0 + x).log2()).sum::<f64>()).sum();
    total / sinrs.len() as f64
}

/// SE evaluation against one true channel. The ideal precoders and gain
/// matrices are computed once and shared by every estimate evaluated.
#[derive(Debug, Clone)]
pub struct SeEvaluator {
    truth: Vec<ComplexMatrix>,
    ideal_gain: Vec<ComplexMatrix>,
    ideal_q: Vec<ComplexMatrix>,
    subcarriers: Vec<usize>,
    noise_var: f64,
    total_power: f64,
}

impl SeEvaluator {
    /// Evaluates on every `stride`-th subcarrier (1 = full band).
    pub fn new(h_true: &ChannelTensor, noise_var: f64, total_power: f64, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("subcarrier stride must be >= 1".into()));
        }
        if !(noise_var > 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance must be > 0, got {noise_var}")));
        }
        let subcarriers: Vec<usize> = (0..h_true.len()).step_by(stride).collect();
        let mut truth = Vec::with_capacity(subcarriers.len());
        let mut ideal_gain = Vec::with_capacity(subcarriers.len());
        let mut ideal_q = Vec::with_capacity(subcarriers.len());
        for &n in &subcarriers {
            let h = &h_true[n];
            let p = design_precoder(h, noise_var, total_power)?;
            ideal_gain.push(channel_gain(&p.q, h, &p.f, &p.powers)?);
            ideal_q.push(p.q);
            truth.push(h.clone());
        }
        Ok(SeEvaluator {
            truth,
            ideal_gain,
            ideal_q,
            subcarriers,
            noise_var,
            total_power,
        })
    }

    pub fn subcarriers(&self) -> &[usize] {
        &self.subcarriers
    }

    /// SE with perfect CSI (`Ḡ = G_ideal`, no estimation-error term).
    pub fn perfect(&self) -> Result<f64> {
        let sinrs = self
            .ideal_gain
            .iter()
            .zip(&self.ideal_q)
            .map(|(g, q)| sinr(g, &vec![0.0; g.nrows()], self.noise_var, q))
            .collect::<Result<Vec<_>>>()?;
        Ok(spectral_efficiency(&sinrs))
    }

    /// SE when precoder/combiner are designed on `h_est` but data crosses the true channel.
    pub fn evaluate(&self, h_est: &ChannelTensor) -> Result<f64> {
        let needed = self.subcarriers.last().map_or(0, |n| n + 1);
        if h_est.len() < needed || (h_est.rows(), h_est.cols()) != self.truth[0].shape() {
            return Err(Error::dims(
                format!("{needed} subcarriers of {:?}", self.truth[0].shape()),
                format!("{:?}", h_est.shape()),
            ));
        }
        let mut sinrs = Vec::with_capacity(self.subcarriers.len());
        for (i, &n) in self.subcarriers.iter().enumerate() {
            let p = design_precoder(&h_est[n], self.noise_var, self.total_power)?;
            let g = channel_gain(&p.q, &self.truth[i], &p.f, &p.powers)?;
            let err = error_covariance(&g, &self.ideal_gain[i])?;
            sinrs.push(sinr(&g, &err, self.noise_var, &p.q)?);
        }
        Ok(spectral_efficiency(&sinrs))
    }
}

/// SE of one estimate on the full band; `None` means perfect CSI.
pub fn evaluate_se(h_true: &ChannelTensor, h_est: Option<&ChannelTensor>, noise_var: f64, total_power: f64) -> Result<f64> {
    let ev = SeEvaluator::new(h_true, noise_var, total_power, 1)?;
    match h_est {
        Some(h) => ev.evaluate(h),
        None => ev.perfect(),
    }
}
