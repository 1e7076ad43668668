//! NMSE-vs-SNR sweep and SE-CDF experiments.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::gen_channel_with;
use crate::config::DualBandConfig;
use crate::dataset::DrawRanges;
use crate::error::{Error, Result};
use crate::method::Method;
use crate::metrics::{cdf_by_method, nmse, summarize_cells, CdfSummary, CellSummary, Metric, MetricRecord};
use crate::pipeline::{estimate, run_training, train_on_channel, EstimateBundle, ModelSet, TrainingOptions};
use crate::precoding::SeEvaluator;
use crate::rng::RngStream;

/// Experiment description, usually loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub methods: Vec<Method>,
    /// mmWave SNR grid of the sweep, dB.
    pub snr_db: Vec<f64>,
    /// Sub-6 GHz K-factor grid of the sweep, dB.
    pub k_db: Vec<f64>,
    /// Realizations per sweep cell (L_r).
    pub realizations: usize,
    /// Test samples of the SE-CDF experiment.
    pub samples: usize,
    pub seed: u64,
    /// Angle/phase distributions (sweep) and full scenario distributions (CDF).
    pub ranges: DrawRanges,
    /// Evaluate metrics on every `subcarrier_stride`-th subcarrier (1 = full band).
    pub subcarrier_stride: usize,
    pub output: OutputPaths,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub records: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub cdf: Option<PathBuf>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            methods: vec![Method::Perfect, Method::NonMl, Method::Mrc],
            snr_db: (0..7).map(|i| -20.0 + 5.0 * i as f64).collect(),
            k_db: vec![-20.0, 10.0, 20.0],
            realizations: 100,
            samples: 2000,
            seed: 0,
            ranges: DrawRanges::default(),
            subcarrier_stride: 1,
            output: OutputPaths::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.methods.is_empty() {
            bad.push("methods: empty".to_string());
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|v| !v.is_finite()) {
            bad.push("snr_db: must be a non-empty list of finite values".into());
        }
        if self.k_db.is_empty() || self.k_db.iter().any(|v| !v.is_finite()) {
            bad.push("k_db: must be a non-empty list of finite values".into());
        }
        if self.realizations == 0 {
            bad.push("realizations: must be >= 1".into());
        }
        if self.samples == 0 {
            bad.push("samples: must be >= 1".into());
        }
        if self.subcarrier_stride == 0 {
            bad.push("subcarrier_stride: must be >= 1".into());
        }
        if let Err(e) = self.ranges.validate() {
            bad.push(e.to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid plan: {}", bad.join("; "))))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let plan: ExperimentPlan =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("plan: {}", e.message())))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Methods that can run: non-ML ones plus ML ones with a loaded model.
    /// Every skipped method is reported in the returned warnings.
    pub fn runnable_methods(&self, models: &ModelSet) -> (Vec<Method>, Vec<String>) {
        let mut run = Vec::new();
        let mut warnings = Vec::new();
        for &m in &self.methods {
            if run.contains(&m) {
                continue;
            }
            if m.is_ml() && models.get(m).is_none() {
                warnings.push(format!("{m}: no model loaded; skipped"));
            } else {
                run.push(m);
            }
        }
        (run, warnings)
    }
}

/// Result of an experiment: raw records plus the methods that were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<MetricRecord>,
    pub warnings: Vec<String>,
}

impl ExperimentOutput {
    pub fn nmse_table(&self) -> Vec<CellSummary> {
        summarize_cells(&self.records, Metric::Nmse)
    }

    pub fn se_cdfs(&self) -> Vec<CdfSummary> {
        cdf_by_method(&self.records, Metric::Se)
    }
}

fn subcarrier_subset(n: usize, stride: usize) -> Option<Vec<usize>> {
    (stride > 1).then(|| (0..n).step_by(stride).collect())
}

fn restrict(bundle: EstimateBundle, subset: &Option<Vec<usize>>) -> Result<EstimateBundle> {
    match subset {
        Some(s) => bundle.select(s),
        None => Ok(bundle),
    }
}

/// Stream id of sweep realization `r` in K-cell `k_idx`.
pub fn sweep_stream(k_idx: usize, r: usize) -> u64 {
    ((k_idx as u64) << 32) | r as u64
}

/// For every (K, SNR, realization) runs the full pipeline and records the NMSE of
/// each method. A realization keeps its channel, angles and noise draws across the
/// SNR grid; only the noise power changes. Output order: K, SNR, realization, method.
pub fn run_nmse_sweep(cfg: &DualBandConfig, plan: &ExperimentPlan, models: &ModelSet) -> Result<ExperimentOutput> {
    plan.validate()?;
    let (methods, warnings) = plan.runnable_methods(models);
    for w in &warnings {
        log::warn!("{w}");
    }
    let opts = TrainingOptions::default();
    let subset = subcarrier_subset(cfg.mmw.num_subcarriers, plan.subcarrier_stride);
    let jobs: Vec<(usize, usize)> = (0..plan.k_db.len())
        .flat_map(|k| (0..plan.realizations).map(move |r| (k, r)))
        .collect();
    // per job: records indexed [snr][method]
    let per_job = jobs
        .par_iter()
        .map(|&(k_idx, r)| -> Result<Vec<Vec<MetricRecord>>> {
            let stream = sweep_stream(k_idx, r);
            let mut rng = RngStream::derive(plan.seed, stream);
            let k_db = plan.k_db[k_idx];
            let draw = plan.ranges.draw_at(cfg, plan.snr_db[0], k_db, &mut rng)?;
            let channel = gen_channel_with(cfg, &opts.profile, &draw.scenario, &mut rng.fork())?;
            plan.snr_db
                .iter()
                .map(|&snr_db| {
                    let mut realization = channel.clone();
                    let at = plan.ranges.with_snr(&draw.scenario, snr_db);
                    realization.scenario = at;
                    let bundle = restrict(train_on_channel(cfg, realization, &mut rng.clone(), &opts)?, &subset)?;
                    methods
                        .iter()
                        .map(|&m| {
                            let est = estimate(m, &bundle, cfg, models)?.expect("runnable method");
                            Ok(MetricRecord {
                                method: m,
                                snr_db,
                                k_db,
                                seed: stream,
                                nmse: Some(nmse(&bundle.truth, &est)?),
                                se: None,
                            })
                        })
                        .collect()
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(jobs.len() * plan.snr_db.len() * methods.len());
    for cell in per_job.chunks(plan.realizations) {
        for s in 0..plan.snr_db.len() {
            records.extend(cell.iter().flat_map(|job| job[s].iter().cloned()));
        }
    }
    Ok(ExperimentOutput { records, warnings })
}

/// SE (and NMSE) per test sample drawn from `plan.ranges`, for every method.
/// Output order: sample, method.
pub fn run_se_cdf(cfg: &DualBandConfig, plan: &ExperimentPlan, models: &ModelSet) -> Result<ExperimentOutput> {
    plan.validate()?;
    let (methods, warnings) = plan.runnable_methods(models);
    for w in &warnings {
        log::warn!("{w}");
    }
    let opts = TrainingOptions::default();
    let subset = subcarrier_subset(cfg.mmw.num_subcarriers, plan.subcarrier_stride);
    let per_sample = (0..plan.samples)
        .into_par_iter()
        .map(|i| -> Result<Vec<MetricRecord>> {
            let mut rng = RngStream::derive(plan.seed, i as u64);
            let draw = plan.ranges.draw(cfg, &mut rng)?;
            let bundle = restrict(run_training(cfg, &draw.scenario, &mut rng, &opts)?, &subset)?;
            let ev = SeEvaluator::new(&bundle.truth, bundle.noise_var(), cfg.total_tx_power, 1)?;
            methods
                .iter()
                .map(|&m| {
                    let (se, err) = if m == Method::Perfect {
                        (ev.perfect()?, 0.0)
                    } else {
                        let est = estimate(m, &bundle, cfg, models)?.expect("runnable method");
                        (ev.evaluate(&est)?, nmse(&bundle.truth, &est)?)
                    };
                    Ok(MetricRecord {
                        method: m,
                        snr_db: draw.snr_db,
                        k_db: draw.k_db,
                        seed: i as u64,
                        nmse: Some(err),
                        se: Some(se),
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutput {
        records: per_sample.into_iter().flatten().collect(),
        warnings,
    })
}
