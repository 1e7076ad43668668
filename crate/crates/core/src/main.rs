use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dualband::config::DualBandConfig;
use dualband::dataset::{estimate_dataset, generate_dataset, read_dataset, write_estimates, DrawRanges};
use dualband::experiments::{run_nmse_sweep, run_se_cdf, ExperimentOutput, ExperimentPlan};
use dualband::metrics::{write_cdf_csv, write_csv, write_json, write_summary_csv, MetricRecord};
use dualband::nn::{check_parity, load_model, read_parity_vectors};
use dualband::pipeline::ModelSet;

/// Tolerance of the cross-implementation parity check (relative L2 error).
const PARITY_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "dualband", version, about = "Dual-band MIMO-OFDM channel estimation simulator")]
struct Cli {
    /// System configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the plan's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "DUALBAND_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training/test dataset.
    Dataset {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Scenario ranges (TOML); defaults to the standard training ranges.
        #[arg(long)]
        ranges: Option<PathBuf>,
    },
    /// NMSE versus SNR sweep.
    Sweep {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        models_dir: Option<PathBuf>,
        /// Record file (.csv or .json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spectral-efficiency CDF over random scenarios.
    Cdf {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        models_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a model on every sample of a dataset.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a model package and optionally check it against parity vectors.
    ValidateModel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        parity: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(config_err("worker count must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime_err)?;
    }
    let cfg = match &cli.config {
        Some(p) => DualBandConfig::load(p).map_err(config_err)?,
        None => DualBandConfig::default().validated().map_err(config_err)?,
    };

    match cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
        Command::Dataset { count, out, ranges } => {
            let ranges = match ranges {
                Some(p) => DrawRanges::load(p).map_err(config_err)?,
                None => DrawRanges::default(),
            };
            let seed = cli.seed.unwrap_or(0);
            generate_dataset(&cfg, &ranges, count, seed, &out).map_err(runtime_err)?;
            log::info!("wrote {count} samples to {}", out.display());
            Ok(())
        }
        Command::Sweep { plan, models_dir, out } => {
            let plan = load_plan(plan.as_deref(), cli.seed)?;
            let models = load_models(&cfg, &plan, models_dir.as_deref())?;
            let out = out.or_else(|| plan.output.records.clone()).ok_or_else(|| {
                config_err("no output path: pass --out or set output.records in the plan")
            })?;
            let res = run_nmse_sweep(&cfg, &plan, &models).map_err(runtime_err)?;
            write_records(&out, &res)?;
            let summary = plan.output.summary.clone().unwrap_or_else(|| sibling(&out, "summary"));
            write_summary_csv(&summary, &res.nmse_table()).map_err(runtime_err)?;
            for c in res.nmse_table() {
                println!(
                    "{:>9} K={:>6.1} dB SNR={:>6.1} dB  NMSE {:.4e} ± {:.1e}",
                    c.method.tag(),
                    c.k_db,
                    c.snr_db,
                    c.mean,
                    c.ci95
                );
            }
            Ok(())
        }
        Command::Cdf { plan, models_dir, out } => {
            let plan = load_plan(plan.as_deref(), cli.seed)?;
            let models = load_models(&cfg, &plan, models_dir.as_deref())?;
            let out = out.or_else(|| plan.output.records.clone()).ok_or_else(|| {
                config_err("no output path: pass --out or set output.records in the plan")
            })?;
            let res = run_se_cdf(&cfg, &plan, &models).map_err(runtime_err)?;
            write_records(&out, &res)?;
            let cdfs = res.se_cdfs();
            let cdf_path = plan.output.cdf.clone().unwrap_or_else(|| sibling(&out, "cdf"));
            write_cdf_csv(&cdf_path, &cdfs).map_err(runtime_err)?;
            for c in &cdfs {
                println!("{:>9} median SE {:.4} bit/s/Hz ({} samples)", c.method.tag(), c.median, c.count);
            }
            Ok(())
        }
        Command::Infer { model, input, out } => {
            let model = load_model(&model).map_err(runtime_err)?;
            let (file, samples) = read_dataset(&input).map_err(runtime_err)?;
            let est = estimate_dataset(&model, &samples).map_err(runtime_err)?;
            write_estimates(&out, file.header.m_rx, file.header.m_tx, &est).map_err(runtime_err)?;
            if !samples.is_empty() {
                let nmse = samples
                    .iter()
                    .zip(&est)
                    .map(|(s, e)| (&s.target - e).norm_squared() / s.target.norm_squared().max(f64::MIN_POSITIVE))
                    .sum::<f64>()
                    / samples.len() as f64;
                println!("{} samples, NMSE {nmse:.4e}", samples.len());
            }
            Ok(())
        }
        Command::ValidateModel { model, parity } => {
            let m = load_model(&model).map_err(runtime_err)?;
            let (h, w) = m.shape();
            println!(
                "{}: {} {} {}x{}, {} parameters, {} convolutions",
                model.display(),
                m.architecture(),
                m.variant(),
                h,
                w,
                m.num_parameters(),
                m.num_convs()
            );
            if let Some(p) = parity {
                let vectors = read_parity_vectors(&p).map_err(runtime_err)?;
                let report = check_parity(&m, &vectors, PARITY_TOLERANCE).map_err(runtime_err)?;
                println!(
                    "parity: {} vectors, max relative error {:.3e}, {} failures",
                    report.count,
                    report.max_rel_error,
                    report.failures
                );
                if !report.passed() {
                    return Err(runtime_err(format!("parity check failed (tolerance {PARITY_TOLERANCE:e})")));
                }
            }
            Ok(())
        }
    }
}

fn load_plan(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentPlan, Failure> {
    let mut plan = match path {
        Some(p) => ExperimentPlan::load(p).map_err(config_err)?,
        None => ExperimentPlan::default(),
    };
    if let Some(s) = seed {
        plan.seed = s;
    }
    Ok(plan)
}

fn load_models(cfg: &DualBandConfig, plan: &ExperimentPlan, dir: Option<&Path>) -> Result<ModelSet, Failure> {
    let Some(dir) = dir else {
        return Ok(ModelSet::new());
    };
    let (set, warnings) = ModelSet::load_dir(dir, &plan.methods, &cfg.mmw).map_err(config_err)?;
    // the experiment reports every skipped method itself
    for w in warnings {
        log::debug!("{w}");
    }
    Ok(set)
}

fn write_records(path: &Path, res: &ExperimentOutput) -> Result<(), Failure> {
    let recs: &[MetricRecord] = &res.records;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if json {
        write_json(path, recs)
    } else {
        write_csv(path, recs)
    }
    .map_err(runtime_err)?;
    log::info!("wrote {} records to {}", recs.len(), path.display());
    Ok(())
}

/// `dir/stem_<suffix>.csv` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    path.with_file_name(format!("{stem}_{suffix}.csv"))
}
