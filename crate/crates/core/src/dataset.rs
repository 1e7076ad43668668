//! Training/test dataset generation for the estimation networks.
//!
//! Each record describes the central mmWave subcarriers `n_c = N/2` of one
//! realization, as f32 values in this order (matrices row-major, `M = M_Rx·M_Tx`):
//!
//! | field        | len | content                         |
//! |--------------|-----|---------------------------------|
//! | `inband_re`  | M   | Re H̃[n_c]                       |
//! | `inband_im`  | M   | Im H̃[n_c]                       |
//! | `oob_re`     | M   | Re Ĥ[n_c]                       |
//! | `oob_im`     | M   | Im Ĥ[n_c]                       |
//! | `k_factor`   | M   | K̃ (sub-6 estimate, linear)·1    |
//! | `noise_var`  | M   | σ_w²·1                          |
//! | `target_re`  | M   | Re H[n_c]                       |
//! | `target_im`  | M   | Im H[n_c]                       |
//! | `k_db`       | 1   | drawn K in dB                   |
//! | `snr_db`     | 1   | drawn mmWave SNR in dB          |

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::ScenarioDraw;
use crate::config::DualBandConfig;
use crate::error::{Error, Result};
use crate::format::{read_records, FieldSpec, FileHeader, RecordFile, RecordWriter};
use crate::linalg::{ComplexMatrix, C64};
use crate::nn::{assemble_input, forward, ModelPackage, Variant};
use crate::pipeline::{run_training, TrainingOptions};
use crate::rng::RngStream;

pub const DATASET_KIND: &str = "dataset";
const CHUNK: usize = 64;

/// Closed interval `[lo, hi]`, written as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.uniform(self.lo, self.hi)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval { lo: v[0], hi: v[1] }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(v: Interval) -> Self {
        [v.lo, v.hi]
    }
}

/// Scenario distributions. SNR and K are uniform in dB, angles uniform in
/// degrees, LOS phases uniform on `[-π, π]` independently per band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrawRanges {
    /// mmWave pre-beamforming SNR.
    pub snr_db: Interval,
    /// Sub-6 GHz K-factor; the mmWave one is `k_scale` times larger.
    pub k_db: Interval,
    pub aod_deg: Interval,
    pub aoa_deg: Interval,
    /// Sub-6 GHz SNR minus mmWave SNR.
    pub sub6_snr_offset_db: f64,
}

impl Default for DrawRanges {
    fn default() -> Self {
        DrawRanges {
            snr_db: Interval::new(-20.0, 10.0),
            k_db: Interval::new(-20.0, 30.0),
            aod_deg: Interval::new(-90.0, 90.0),
            aoa_deg: Interval::new(-90.0, 90.0),
            sub6_snr_offset_db: 20.0,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// A scenario plus the dB values it was drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSample {
    pub scenario: ScenarioDraw,
    pub snr_db: f64,
    pub k_db: f64,
}

impl DrawRanges {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, iv) in [
            ("snr_db", self.snr_db),
            ("k_db", self.k_db),
            ("aod_deg", self.aod_deg),
            ("aoa_deg", self.aoa_deg),
        ] {
            if !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo <= iv.hi) {
                bad.push(format!("{name}: [{}, {}] is not a finite interval", iv.lo, iv.hi));
            }
        }
        for (name, iv) in [("aod_deg", self.aod_deg), ("aoa_deg", self.aoa_deg)] {
            if iv.lo < -90.0 || iv.hi > 90.0 {
                bad.push(format!("{name}: must lie within [-90, 90]"));
            }
        }
        if !self.sub6_snr_offset_db.is_finite() {
            bad.push("sub6_snr_offset_db: must be finite".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid ranges: {}", bad.join("; "))))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let r: DrawRanges =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("ranges: {}", e.message())))?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Draws a scenario with the SNR and K given explicitly (angles/phases still random).
    pub fn draw_at(&self, cfg: &DualBandConfig, snr_db: f64, k_db: f64, rng: &mut RngStream) -> Result<ScenarioSample> {
        let aod = self.aod_deg.draw(rng).to_radians();
        let aoa = self.aoa_deg.draw(rng).to_radians();
        let phase_sub6 = rng.uniform(-PI, PI);
        let phase_mmw = rng.uniform(-PI, PI);
        let scenario = ScenarioDraw::new(
            aod.clamp(-PI / 2.0, PI / 2.0),
            aoa.clamp(-PI / 2.0, PI / 2.0),
            db_to_linear(k_db),
            cfg.k_scale,
            phase_sub6,
            phase_mmw,
            db_to_linear(snr_db),
            db_to_linear(snr_db + self.sub6_snr_offset_db),
        )?;
        Ok(ScenarioSample { scenario, snr_db, k_db })
    }

    /// The same scenario at another mmWave SNR (sub-6 keeps the offset).
    pub fn with_snr(&self, scenario: &ScenarioDraw, snr_db: f64) -> ScenarioDraw {
        ScenarioDraw {
            snr_mmw: db_to_linear(snr_db),
            snr_sub6: db_to_linear(snr_db + self.sub6_snr_offset_db),
            ..*scenario
        }
    }

    pub fn draw(&self, cfg: &DualBandConfig, rng: &mut RngStream) -> Result<ScenarioSample> {
        let snr_db = self.snr_db.draw(rng);
        let k_db = self.k_db.draw(rng);
        self.draw_at(cfg, snr_db, k_db, rng)
    }
}

pub fn dataset_layout(m_rx: usize, m_tx: usize) -> Vec<FieldSpec> {
    let m = m_rx * m_tx;
    let mut out: Vec<FieldSpec> = [
        "inband_re",
        "inband_im",
        "oob_re",
        "oob_im",
        "k_factor",
        "noise_var",
        "target_re",
        "target_im",
    ]
    .iter()
    .map(|n| FieldSpec::new(n, m))
    .collect();
    out.push(FieldSpec::new("k_db", 1));
    out.push(FieldSpec::new("snr_db", 1));
    out
}

/// SHA-256 over the canonical TOML of the configuration and JSON of the ranges.
pub fn config_hash(cfg: &DualBandConfig, ranges: &DrawRanges) -> String {
    let mut h = Sha256::new();
    h.update(cfg.to_toml_string().as_bytes());
    h.update(serde_json::to_vec(ranges).expect("ranges serialise"));
    hex::encode(h.finalize())
}

/// One dataset record, decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub inband: ComplexMatrix,
    pub oob: ComplexMatrix,
    pub k_factor: f64,
    pub noise_var: f64,
    pub target: ComplexMatrix,
    pub k_db: f64,
    pub snr_db: f64,
}

fn push_matrix(out: &mut Vec<f32>, m: &ComplexMatrix) {
    let (r, c) = m.shape();
    for part in [0, 1] {
        for i in 0..r {
            for j in 0..c {
                let v = m[(i, j)];
                out.push(if part == 0 { v.re } else { v.im } as f32);
            }
        }
    }
}

impl DatasetSample {
    pub fn encode(&self) -> Vec<f32> {
        let (r, c) = self.inband.shape();
        let m = r * c;
        let mut out = Vec::with_capacity(8 * m + 2);
        push_matrix(&mut out, &self.inband);
        push_matrix(&mut out, &self.oob);
        out.extend(std::iter::repeat_n(self.k_factor as f32, m));
        out.extend(std::iter::repeat_n(self.noise_var as f32, m));
        push_matrix(&mut out, &self.target);
        out.push(self.k_db as f32);
        out.push(self.snr_db as f32);
        out
    }

    pub fn decode(rec: &[f32], m_rx: usize, m_tx: usize) -> Result<Self> {
        let m = m_rx * m_tx;
        if rec.len() != 8 * m + 2 {
            return Err(Error::dims(8 * m + 2, rec.len()));
        }
        let mat = |k: usize| {
            let re = &rec[k * m..(k + 1) * m];
            let im = &rec[(k + 1) * m..(k + 2) * m];
            ComplexMatrix::from_fn(m_rx, m_tx, |i, j| C64::new(re[i * m_tx + j] as f64, im[i * m_tx + j] as f64))
        };
        Ok(DatasetSample {
            inband: mat(0),
            oob: mat(2),
            k_factor: rec[4 * m] as f64,
            noise_var: rec[5 * m] as f64,
            target: mat(6),
            k_db: rec[8 * m] as f64,
            snr_db: rec[8 * m + 1] as f64,
        })
    }
}

/// Runs the full pipeline for sample `index` (stream `index` under `seed`).
pub fn generate_sample(
    cfg: &DualBandConfig,
    ranges: &DrawRanges,
    seed: u64,
    index: u64,
    opts: &TrainingOptions,
) -> Result<DatasetSample> {
    let mut rng = RngStream::derive(seed, index);
    let draw = ranges.draw(cfg, &mut rng)?;
    let bundle = run_training(cfg, &draw.scenario, &mut rng, opts)?;
    let nc = cfg.mmw.num_subcarriers / 2;
    Ok(DatasetSample {
        inband: bundle.inband[nc].clone(),
        oob: bundle.oob[nc].clone(),
        k_factor: bundle.k_factor,
        noise_var: bundle.noise_var(),
        target: bundle.truth[nc].clone(),
        k_db: draw.k_db,
        snr_db: draw.snr_db,
    })
}

/// Writes `count` samples to `path`. Records are generated in parallel and
/// written in index order; on any error the partial file is removed.
pub fn generate_dataset(
    cfg: &DualBandConfig,
    ranges: &DrawRanges,
    count: usize,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<()> {
    ranges.validate()?;
    let cfg = cfg.clone().validated()?;
    let opts = TrainingOptions::default();
    let mut header = FileHeader::new(
        DATASET_KIND,
        cfg.mmw.num_rx,
        cfg.mmw.num_tx,
        count,
        dataset_layout(cfg.mmw.num_rx, cfg.mmw.num_tx),
    );
    header.seed = Some(seed);
    header.config_hash = Some(config_hash(&cfg, ranges));
    header.meta = Some(serde_json::json!({
        "ranges": ranges,
        "subcarrier": cfg.mmw.num_subcarriers / 2,
    }));
    let mut out = RecordWriter::create(path, &header)?;
    let mut start = 0;
    while start < count {
        let end = (start + CHUNK).min(count);
        let chunk = (start..end)
            .into_par_iter()
            .map(|i| generate_sample(&cfg, ranges, seed, i as u64, &opts).map(|s| s.encode()))
            .collect::<Result<Vec<_>>>()?;
        for rec in &chunk {
            out.write_record(rec)?;
        }
        log::debug!("dataset: {end}/{count} samples");
        start = end;
    }
    out.finish()
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(RecordFile, Vec<DatasetSample>)> {
    let path = path.as_ref();
    let file = read_records(path)?;
    file.header.expect_kind(path, DATASET_KIND)?;
    let (r, c) = (file.header.m_rx, file.header.m_tx);
    if file.header.layout != dataset_layout(r, c) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "unexpected dataset record layout".into(),
        });
    }
    let samples = file
        .records()
        .map(|rec| DatasetSample::decode(rec, r, c))
        .collect::<Result<Vec<_>>>()?;
    Ok((file, samples))
}

pub const ESTIMATES_KIND: &str = "estimates";

/// Network estimate of every sample's central-subcarrier channel.
pub fn estimate_dataset(model: &ModelPackage, samples: &[DatasetSample]) -> Result<Vec<ComplexMatrix>> {
    samples
        .par_iter()
        .map(|s| {
            model.ensure_shape(s.inband.nrows(), s.inband.ncols())?;
            let oob = (model.variant() == Variant::Oob).then_some(&s.oob);
            let x = assemble_input(&s.inband, oob, s.k_factor, s.noise_var, model.input_scale())?;
            Ok(forward(model, &x)?)
        })
        .collect()
}

/// Record file of kind `estimates` with fields `est_re`, `est_im` (row-major).
pub fn write_estimates(path: impl AsRef<Path>, m_rx: usize, m_tx: usize, estimates: &[ComplexMatrix]) -> Result<()> {
    let m = m_rx * m_tx;
    let header = FileHeader::new(
        ESTIMATES_KIND,
        m_rx,
        m_tx,
        estimates.len(),
        vec![FieldSpec::new("est_re", m), FieldSpec::new("est_im", m)],
    );
    let mut out = RecordWriter::create(path, &header)?;
    let mut rec = Vec::with_capacity(2 * m);
    for e in estimates {
        if e.shape() != (m_rx, m_tx) {
            return Err(Error::dims(format!("{m_rx}x{m_tx}"), format!("{}x{}", e.nrows(), e.ncols())));
        }
        rec.clear();
        push_matrix(&mut rec, e);
        out.write_record(&rec)?;
    }
    out.finish()
}

pub fn read_estimates(path: impl AsRef<Path>) -> Result<Vec<ComplexMatrix>> {
    let path = path.as_ref();
    let file = read_records(path)?;
    file.header.expect_kind(path, ESTIMATES_KIND)?;
    let (r, c) = (file.header.m_rx, file.header.m_tx);
    if file.header.stride() != 2 * r * c {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "unexpected estimates record layout".into(),
        });
    }
    Ok(file
        .records()
        .map(|rec| {
            let m = r * c;
            ComplexMatrix::from_fn(r, c, |i, j| C64::new(rec[i * c + j] as f64, rec[m + i * c + j] as f64))
        })
        .collect())
}
