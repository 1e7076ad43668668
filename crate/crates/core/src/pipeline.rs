//! One realization end to end: channel draw, both training steps, angle and
//! K-factor estimation on sub-6 GHz, and the per-method mmWave estimates.

use std::collections::BTreeMap;
use std::path::Path;

use crate::channel::{gen_channel_with, ChannelRealization, ClusterProfile, ScenarioDraw};
use crate::combining::{estimate_angles, estimate_k_factor, mrc_combine, mrc_weight, AngleEstimate, DEFAULT_ANGLE_GRID};
use crate::config::{BandConfig, DualBandConfig};
use crate::error::{Error, Result};
use crate::linalg::ChannelTensor;
use crate::method::Method;
use crate::nn::{estimate_all_subcarriers, load_model_for_band, ModelPackage, NetworkInput};
use crate::pilot::{
    allocate_pilots, estimate_beamformed, los_delay_filter, ls_estimate_interpolate, reconstruct_oob_estimate,
    simulate_training_step1, simulate_training_step2,
};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingOptions {
    pub profile: ClusterProfile,
    pub angle_grid: usize,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        TrainingOptions {
            profile: ClusterProfile::default(),
            angle_grid: DEFAULT_ANGLE_GRID,
        }
    }
}

/// Everything the estimators need for one realization, on the mmWave band.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateBundle {
    pub scenario: ScenarioDraw,
    /// True channel H.
    pub truth: ChannelTensor,
    /// In-band LS estimate H̃.
    pub inband: ChannelTensor,
    /// Out-of-band aided estimate Ĥ.
    pub oob: ChannelTensor,
    /// Angles estimated on sub-6 GHz.
    pub angles: AngleEstimate,
    /// K̃ estimated on sub-6 GHz.
    pub k_factor: f64,
}

impl EstimateBundle {
    pub fn noise_var(&self) -> f64 {
        self.scenario.noise_mmw()
    }

    pub fn select(&self, subcarriers: &[usize]) -> Result<EstimateBundle> {
        Ok(EstimateBundle {
            truth: self.truth.select(subcarriers)?,
            inband: self.inband.select(subcarriers)?,
            oob: self.oob.select(subcarriers)?,
            ..self.clone()
        })
    }
}

/// Draws the channel and runs both training steps. The stream is consumed in a
/// fixed order (channel, sub-6 pilots, mmWave pilots, beamformed pilots).
pub fn run_training(
    cfg: &DualBandConfig,
    scenario: &ScenarioDraw,
    rng: &mut RngStream,
    opts: &TrainingOptions,
) -> Result<EstimateBundle> {
    let realization = gen_channel_with(cfg, &opts.profile, scenario, &mut rng.fork())?;
    train_on_channel(cfg, realization, rng, opts)
}

/// Training steps on an already drawn channel; SNRs come from `realization.scenario`.
pub fn train_on_channel(
    cfg: &DualBandConfig,
    realization: ChannelRealization,
    rng: &mut RngStream,
    opts: &TrainingOptions,
) -> Result<EstimateBundle> {
    let scenario = &realization.scenario;
    let mut rng_sub6 = rng.fork();
    let mut rng_mmw = rng.fork();
    let mut rng_beam = rng.fork();

    let grid_sub6 = allocate_pilots(&cfg.sub6)?;
    let y = simulate_training_step1(&realization.h_sub6, &grid_sub6, scenario.noise_sub6(), &mut rng_sub6)?;
    let inband_sub6 = ls_estimate_interpolate(&y, &grid_sub6)?;
    let angles = estimate_angles(&inband_sub6, &cfg.sub6, opts.angle_grid)?;
    let k_factor = estimate_k_factor(&inband_sub6)?;

    let grid_mmw = allocate_pilots(&cfg.mmw)?;
    let y = simulate_training_step1(&realization.h_mmw, &grid_mmw, scenario.noise_mmw(), &mut rng_mmw)?;
    let inband = ls_estimate_interpolate(&y, &grid_mmw)?;

    let oob = out_of_band_estimate(&realization.h_mmw, &cfg.mmw, &angles, scenario.noise_mmw(), &mut rng_beam)?;

    Ok(EstimateBundle {
        scenario: realization.scenario,
        truth: realization.h_mmw,
        inband,
        oob,
        angles,
        k_factor,
    })
}

/// Step 2 along the given beam, tap-0 filtering and rank-1 reconstruction.
pub fn out_of_band_estimate(
    h: &ChannelTensor,
    band: &BandConfig,
    angles: &AngleEstimate,
    noise_var: f64,
    rng: &mut RngStream,
) -> Result<ChannelTensor> {
    let y = simulate_training_step2(h, band, angles.aoa, angles.aod, noise_var, rng)?;
    let g = estimate_beamformed(&y, angles.aoa, angles.aod);
    let g_los = los_delay_filter(&g.gains)?;
    reconstruct_oob_estimate(&g_los, band, g.aoa, g.aod)
}

/// Loaded networks keyed by the ML method they implement.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    models: BTreeMap<Method, ModelPackage>,
}

impl ModelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, method: Method, model: ModelPackage) -> Result<()> {
        let (arch, variant) = method
            .network()
            .ok_or_else(|| Error::InvalidArgument(format!("{method} is not an ML method")))?;
        if (model.architecture(), model.variant()) != (arch, variant) {
            return Err(Error::InvalidArgument(format!(
                "{method} needs a {arch}/{variant} model, got {}/{}",
                model.architecture(),
                model.variant()
            )));
        }
        self.models.insert(method, model);
        Ok(())
    }

    pub fn get(&self, method: Method) -> Option<&ModelPackage> {
        self.models.get(&method)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Loads `<dir>/<method-tag>.json` for each requested ML method. Missing
    /// files are reported as warnings; invalid packages are errors.
    pub fn load_dir(dir: impl AsRef<Path>, methods: &[Method], band: &BandConfig) -> Result<(Self, Vec<String>)> {
        let dir = dir.as_ref();
        let mut set = ModelSet::new();
        let mut warnings = Vec::new();
        for &m in methods.iter().filter(|m| m.is_ml()) {
            let path = dir.join(format!("{}.json", m.tag()));
            if !path.exists() {
                warnings.push(format!("{m}: no model at {}; method skipped", path.display()));
                continue;
            }
            set.insert(m, load_model_for_band(&path, band)?)?;
        }
        Ok((set, warnings))
    }
}

/// The mmWave estimate H̄ produced by `method`, or `None` for an ML method without a model.
pub fn estimate(
    method: Method,
    bundle: &EstimateBundle,
    cfg: &DualBandConfig,
    models: &ModelSet,
) -> Result<Option<ChannelTensor>> {
    let out = match method {
        Method::Perfect => bundle.truth.clone(),
        Method::NonMl => bundle.inband.clone(),
        Method::Mrc => {
            let w = mrc_weight(bundle.k_factor, bundle.noise_var(), cfg);
            mrc_combine(&bundle.oob, &bundle.inband, w)?.h
        }
        ml => {
            let Some(model) = models.get(ml) else {
                return Ok(None);
            };
            let input = NetworkInput {
                inband: &bundle.inband,
                oob: Some(&bundle.oob),
                k_factor: bundle.k_factor,
                noise_var: bundle.noise_var(),
            };
            estimate_all_subcarriers(model, &input)?
        }
    };
    Ok(Some(out))
}
