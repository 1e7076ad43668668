//! Python bindings: configuration, realization pipeline, estimators, precoding
//! metrics, network inference, datasets and experiments.
//!
//! Matrices cross the boundary as nested lists of Python `complex`
//! (`[row][col]`, tensors `[subcarrier][row][col]`).

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dualband::config::DualBandConfig;
use dualband::dataset::{self, DrawRanges};
use dualband::experiments::{self, ExperimentPlan};
use dualband::linalg::{ChannelTensor, ComplexMatrix};
use dualband::method::Method;
use dualband::metrics::MetricRecord;
use dualband::nn::{self, Architecture, ModelPackage, Variant};
use dualband::pipeline::{self, ModelSet, TrainingOptions};
use dualband::precoding;
use dualband::rng::RngStream;
use dualband::Error;

type Matrix = Vec<Vec<Complex64>>;
type Tensor = Vec<Matrix>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Model(ref m) => PyValueError::new_err(format!("[{}] {e}", m.code())),
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::Config(_) | Error::Format { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn model_err(e: nn::ModelError) -> PyErr {
    py_err(Error::Model(e))
}

fn to_matrix(m: &Matrix) -> PyResult<ComplexMatrix> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || m.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("matrix must be a non-empty rectangular nested list"));
    }
    Ok(ComplexMatrix::from_fn(rows, cols, |r, c| m[r][c]))
}

fn from_matrix(m: &ComplexMatrix) -> Matrix {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
}

fn to_tensor(t: &Tensor) -> PyResult<ChannelTensor> {
    let slices = t.iter().map(to_matrix).collect::<PyResult<Vec<_>>>()?;
    ChannelTensor::new(slices).map_err(py_err)
}

fn from_tensor(t: &ChannelTensor) -> Tensor {
    t.iter().map(from_matrix).collect()
}

fn parse_method(s: &str) -> PyResult<Method> {
    s.parse().map_err(py_err)
}

/// System configuration of both bands.
#[pyclass(name = "Config", module = "dualband", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: DualBandConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        PyConfig {
            inner: DualBandConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: DualBandConfig::from_toml_str(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: DualBandConfig::load(path).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn num_subcarriers(&self) -> (usize, usize) {
        (self.inner.sub6.num_subcarriers, self.inner.mmw.num_subcarriers)
    }

    /// mmWave `(M_Rx, M_Tx)`.
    #[getter]
    fn antennas(&self) -> (usize, usize) {
        (self.inner.mmw.num_rx, self.inner.mmw.num_tx)
    }

    #[getter]
    fn k_scale(&self) -> f64 {
        self.inner.k_scale
    }

    #[getter]
    fn total_tx_power(&self) -> f64 {
        self.inner.total_tx_power
    }

    fn __repr__(&self) -> String {
        let b = &self.inner.mmw;
        format!("Config(mmw {}x{}, N={})", b.num_rx, b.num_tx, b.num_subcarriers)
    }
}

fn cfg_or_default(cfg: Option<PyConfig>) -> DualBandConfig {
    cfg.map(|c| c.inner).unwrap_or_default()
}

/// Channel-estimation network loaded from a model package.
#[pyclass(name = "Model", module = "dualband", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: ModelPackage,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: nn::load_model(path).map_err(model_err)?,
        })
    }

    /// Randomly initialised network of the default size (for plumbing tests).
    #[staticmethod]
    #[pyo3(signature = (architecture, variant, height=8, width=8, seed=0))]
    fn random(architecture: &str, variant: &str, height: usize, width: usize, seed: u64) -> PyResult<Self> {
        let arch: Architecture = architecture.parse().map_err(model_err)?;
        let var: Variant = variant.parse().map_err(model_err)?;
        let inner = ModelPackage::random(arch, var, height, width, &mut RngStream::new(seed)).map_err(model_err)?;
        Ok(PyModel { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        nn::save_model(&self.inner, path).map_err(model_err)
    }

    #[getter]
    fn architecture(&self) -> String {
        self.inner.architecture().to_string()
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant().to_string()
    }

    /// `(C, H, W)` of the input.
    #[getter]
    fn input_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.inner.shape();
        (self.inner.input_channels(), h, w)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    /// Raw tanh output (`2·H·W`, channel-major) for a flat `C·H·W` input.
    fn forward_raw(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        let (c, h, w) = self.input_shape();
        let x = nn::FeatureTensor::new(c, h, w, input).map_err(model_err)?;
        Ok(nn::forward_raw(&self.inner, &x).map_err(model_err)?.into_data())
    }

    /// Channel estimate for one subcarrier.
    #[pyo3(signature = (inband, oob, k_factor, noise_var))]
    fn estimate(&self, inband: Matrix, oob: Option<Matrix>, k_factor: f64, noise_var: f64) -> PyResult<Matrix> {
        let h_tilde = to_matrix(&inband)?;
        let h_hat = oob.as_ref().map(to_matrix).transpose()?;
        let h_hat = match self.inner.variant() {
            Variant::Oob => Some(h_hat.ok_or_else(|| PyValueError::new_err("out-of-band model needs `oob`"))?),
            Variant::Inband => None,
        };
        let x = nn::assemble_input(&h_tilde, h_hat.as_ref(), k_factor, noise_var, self.inner.input_scale())
            .map_err(model_err)?;
        Ok(from_matrix(&nn::forward(&self.inner, &x).map_err(model_err)?))
    }

    /// `(count, max_rel_error, failures)` against a parity file.
    #[pyo3(signature = (path, tolerance=1e-4))]
    fn check_parity(&self, path: PathBuf, tolerance: f64) -> PyResult<(usize, f64, usize)> {
        let v = nn::read_parity_vectors(path).map_err(py_err)?;
        let r = nn::check_parity(&self.inner, &v, tolerance).map_err(model_err)?;
        Ok((r.count, r.max_rel_error, r.failures))
    }

    fn __repr__(&self) -> String {
        let (c, h, w) = self.input_shape();
        format!(
            "Model({}, {}, input {c}x{h}x{w}, {} parameters)",
            self.architecture(),
            self.variant(),
            self.num_parameters()
        )
    }
}

/// Draws one realization and runs both training steps. Angles in degrees.
#[pyfunction]
#[pyo3(signature = (snr_db, k_db, aod_deg, aoa_deg, seed=0, config=None, sub6_snr_offset_db=20.0))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    snr_db: f64,
    k_db: f64,
    aod_deg: f64,
    aoa_deg: f64,
    seed: u64,
    config: Option<PyConfig>,
    sub6_snr_offset_db: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = cfg_or_default(config);
    let mut rng = RngStream::new(seed);
    let ranges = DrawRanges {
        snr_db: dataset::Interval::new(snr_db, snr_db),
        k_db: dataset::Interval::new(k_db, k_db),
        aod_deg: dataset::Interval::new(aod_deg, aod_deg),
        aoa_deg: dataset::Interval::new(aoa_deg, aoa_deg),
        sub6_snr_offset_db,
    };
    ranges.validate().map_err(py_err)?;
    let draw = ranges.draw(&cfg, &mut rng).map_err(py_err)?;
    let b = py
        .detach(|| pipeline::run_training(&cfg, &draw.scenario, &mut rng, &TrainingOptions::default()))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("truth", from_tensor(&b.truth))?;
    d.set_item("inband", from_tensor(&b.inband))?;
    d.set_item("oob", from_tensor(&b.oob))?;
    d.set_item("aod_est", b.angles.aod.to_degrees())?;
    d.set_item("aoa_est", b.angles.aoa.to_degrees())?;
    d.set_item("k_factor", b.k_factor)?;
    d.set_item("noise_var", b.noise_var())?;
    d.set_item("mrc_weight", dualband::combining::mrc_weight(b.k_factor, b.noise_var(), &cfg))?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (k_factor, noise_var, config=None))]
fn mrc_weight(k_factor: f64, noise_var: f64, config: Option<PyConfig>) -> f64 {
    dualband::combining::mrc_weight(k_factor, noise_var, &cfg_or_default(config))
}

#[pyfunction]
fn nmse(truth: Tensor, estimate: Tensor) -> PyResult<f64> {
    dualband::metrics::nmse(&to_tensor(&truth)?, &to_tensor(&estimate)?).map_err(py_err)
}

#[pyfunction]
fn waterfill(sigma: Vec<f64>, noise_var: f64, total_power: f64) -> PyResult<Vec<f64>> {
    Ok(precoding::waterfill(&sigma, noise_var, total_power).map_err(py_err)?.powers)
}

/// SE of precoding designed on `estimate` (or on the truth when omitted).
#[pyfunction]
#[pyo3(signature = (truth, estimate, noise_var, total_power=1.0))]
fn spectral_efficiency(truth: Tensor, estimate: Option<Tensor>, noise_var: f64, total_power: f64) -> PyResult<f64> {
    let h = to_tensor(&truth)?;
    let e = estimate.as_ref().map(to_tensor).transpose()?;
    precoding::evaluate_se(&h, e.as_ref(), noise_var, total_power).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (path, count, seed=0, config=None, ranges_toml=None))]
fn generate_dataset(
    py: Python<'_>,
    path: PathBuf,
    count: usize,
    seed: u64,
    config: Option<PyConfig>,
    ranges_toml: Option<&str>,
) -> PyResult<()> {
    let cfg = cfg_or_default(config);
    let ranges = match ranges_toml {
        Some(t) => DrawRanges::from_toml_str(t).map_err(py_err)?,
        None => DrawRanges::default(),
    };
    py.detach(|| dataset::generate_dataset(&cfg, &ranges, count, seed, &path))
        .map_err(py_err)
}

/// Samples as dicts with keys `inband`, `oob`, `target` (matrices), `k_factor`, `noise_var`, `k_db`, `snr_db`.
#[pyfunction]
fn read_dataset<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let (_, samples) = dataset::read_dataset(path).map_err(py_err)?;
    samples
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("inband", from_matrix(&s.inband))?;
            d.set_item("oob", from_matrix(&s.oob))?;
            d.set_item("target", from_matrix(&s.target))?;
            d.set_item("k_factor", s.k_factor)?;
            d.set_item("noise_var", s.noise_var)?;
            d.set_item("k_db", s.k_db)?;
            d.set_item("snr_db", s.snr_db)?;
            Ok(d)
        })
        .collect()
}

fn records_to_py<'py>(py: Python<'py>, records: &[MetricRecord]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("method", r.method.tag())?;
            d.set_item("snr_db", r.snr_db)?;
            d.set_item("k_db", r.k_db)?;
            d.set_item("seed", r.seed)?;
            d.set_item("nmse", r.nmse)?;
            d.set_item("se", r.se)?;
            Ok(d)
        })
        .collect()
}

fn prepare(
    plan_toml: Option<&str>,
    config: Option<PyConfig>,
    models_dir: Option<PathBuf>,
) -> PyResult<(DualBandConfig, ExperimentPlan, ModelSet)> {
    let cfg = cfg_or_default(config);
    let plan = match plan_toml {
        Some(t) => ExperimentPlan::from_toml_str(t).map_err(py_err)?,
        None => ExperimentPlan::default(),
    };
    let models = match models_dir {
        Some(dir) => ModelSet::load_dir(dir, &plan.methods, &cfg.mmw).map_err(py_err)?.0,
        None => ModelSet::new(),
    };
    Ok((cfg, plan, models))
}

/// NMSE-vs-SNR sweep; returns `(records, warnings)`.
#[pyfunction]
#[pyo3(signature = (plan_toml=None, config=None, models_dir=None))]
fn run_sweep<'py>(
    py: Python<'py>,
    plan_toml: Option<&str>,
    config: Option<PyConfig>,
    models_dir: Option<PathBuf>,
) -> PyResult<(Vec<Bound<'py, PyDict>>, Vec<String>)> {
    let (cfg, plan, models) = prepare(plan_toml, config, models_dir)?;
    let out = py
        .detach(|| experiments::run_nmse_sweep(&cfg, &plan, &models))
        .map_err(py_err)?;
    Ok((records_to_py(py, &out.records)?, out.warnings))
}

/// SE-CDF experiment; returns `(records, medians by method tag, warnings)`.
#[pyfunction]
#[pyo3(signature = (plan_toml=None, config=None, models_dir=None))]
#[allow(clippy::type_complexity)]
fn run_cdf<'py>(
    py: Python<'py>,
    plan_toml: Option<&str>,
    config: Option<PyConfig>,
    models_dir: Option<PathBuf>,
) -> PyResult<(Vec<Bound<'py, PyDict>>, Vec<(String, f64)>, Vec<String>)> {
    let (cfg, plan, models) = prepare(plan_toml, config, models_dir)?;
    let out = py
        .detach(|| experiments::run_se_cdf(&cfg, &plan, &models))
        .map_err(py_err)?;
    let medians = out.se_cdfs().iter().map(|c| (c.method.tag().to_string(), c.median)).collect();
    Ok((records_to_py(py, &out.records)?, medians, out.warnings))
}

#[pyfunction]
fn method_tags() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.tag()).collect()
}

#[pyfunction]
fn is_ml_method(tag: &str) -> PyResult<bool> {
    Ok(parse_method(tag)?.is_ml())
}

#[pymodule]
#[pyo3(name = "dualband")]
pub fn dualband_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(mrc_weight, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(waterfill, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(method_tags, m)?)?;
    m.add_function(wrap_pyfunction!(is_ml_method, m)?)?;
    Ok(())
}
