//! NMSE, metric records, aggregation and CSV/JSON export.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, ChannelTensor};
use crate::method::Method;

/// Mean over subcarriers of `‖H − H̄‖²/‖H‖²`. Zero-energy truth slices are skipped with a warning.
pub fn nmse(h_true: &ChannelTensor, h_est: &ChannelTensor) -> Result<f64> {
    h_true.ensure_same_shape(h_est)?;
    let (mut sum, mut used) = (0.0, 0usize);
    for (n, (h, e)) in h_true.iter().zip(h_est.iter()).enumerate() {
        let den = frobenius_sq(h);
        if den == 0.0 {
            log::warn!("subcarrier {n}: zero-energy channel excluded from NMSE");
            continue;
        }
        sum += frobenius_sq(&(h - e)) / den;
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidArgument("NMSE undefined: every channel slice has zero energy".into()));
    }
    Ok(sum / used as f64)
}

/// One evaluated (method, operating point, realization) cell entry.
///
/// CSV column order: `method,snr_db,k_db,seed,nmse,se`; missing metrics are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: Method,
    pub snr_db: f64,
    pub k_db: f64,
    pub seed: u64,
    pub nmse: Option<f64>,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Nmse,
    Se,
}

impl Metric {
    fn get(self, r: &MetricRecord) -> Option<f64> {
        match self {
            Metric::Nmse => r.nmse,
            Metric::Se => r.se,
        }
    }
}

/// Mean with a normal-approximation 95% confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub snr_db: f64,
    pub k_db: f64,
    pub count: usize,
    pub mean: f64,
    /// Half-width `1.96·s/√n`.
    pub ci95: f64,
}

pub fn mean_ci95(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Some((mean, 1.96 * (var / n as f64).sqrt()))
}

/// Per-(method, SNR, K) summaries in first-seen order. Cells with fewer than
/// two values of the metric are omitted with a warning.
pub fn summarize_cells(records: &[MetricRecord], metric: Metric) -> Vec<CellSummary> {
    let mut order: Vec<(Method, u64, u64)> = Vec::new();
    let mut cells: HashMap<(Method, u64, u64), Vec<f64>> = HashMap::new();
    for r in records {
        let key = (r.method, r.snr_db.to_bits(), r.k_db.to_bits());
        let entry = cells.entry(key).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        if let Some(v) = metric.get(r) {
            entry.push(v);
        }
    }
    order
        .into_iter()
        .filter_map(|key| {
            let values = &cells[&key];
            let (method, snr, k) = (key.0, f64::from_bits(key.1), f64::from_bits(key.2));
            match mean_ci95(values) {
                Some((mean, ci95)) => Some(CellSummary {
                    method,
                    snr_db: snr,
                    k_db: k,
                    count: values.len(),
                    mean,
                    ci95,
                }),
                None => {
                    log::warn!("cell {method} snr {snr} dB K {k} dB has {} values; omitted", values.len());
                    None
                }
            }
        })
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Right-continuous empirical CDF: sorted values with `F(x_i) = i/n`.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfSummary {
    pub method: Method,
    pub count: usize,
    pub median: f64,
    pub points: Vec<(f64, f64)>,
}

/// Empirical CDF and median of a metric per method, in first-seen method order.
pub fn cdf_by_method(records: &[MetricRecord], metric: Metric) -> Vec<CdfSummary> {
    let mut order = Vec::new();
    let mut groups: HashMap<Method, Vec<f64>> = HashMap::new();
    for r in records {
        if let Some(v) = metric.get(r) {
            groups
                .entry(r.method)
                .or_insert_with(|| {
                    order.push(r.method);
                    Vec::new()
                })
                .push(v);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let v = &groups[&m];
            CdfSummary {
                method: m,
                count: v.len(),
                median: median(v).expect("non-empty group"),
                points: empirical_cdf(v),
            }
        })
        .collect()
}

pub fn write_csv(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(BufWriter::new(file), records)
}

/// Always emits the header, also for an empty record set.
pub fn write_csv_to(w: impl Write, records: &[MetricRecord]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["method", "snr_db", "k_db", "seed", "nmse", "se"])?;
    for r in records {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["method", "snr_db", "k_db", "seed", "nmse", "se"] {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unexpected CSV header {header:?}"),
        });
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_json(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, records)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_json(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Plot-ready `method,snr_db,k_db,count,mean,ci95` table.
pub fn write_summary_csv(path: impl AsRef<Path>, cells: &[CellSummary]) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path)?;
    for c in cells {
        out.serialize(c)?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Plot-ready `method,value,cdf` table.
pub fn write_cdf_csv(path: impl AsRef<Path>, cdfs: &[CdfSummary]) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["method", "value", "cdf"])?;
    for c in cdfs {
        for (x, f) in &c.points {
            out.write_record([c.method.tag().to_string(), x.to_string(), f.to_string()])?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ComplexMatrix, C64};
    use crate::rng::RngStream;

    fn tensor(rng: &mut RngStream, n: usize) -> ChannelTensor {
        ChannelTensor::new((0..n).map(|_| ComplexMatrix::from_fn(4, 4, |_, _| rng.cn(1.0))).collect()).unwrap()
    }

    #[test]
    fn nmse_cases() {
        let mut rng = RngStream::new(1);
        let h = tensor(&mut rng, 5);
        assert_eq!(nmse(&h, &h).unwrap(), 0.0);
        assert!((nmse(&h, &ChannelTensor::zeros(5, 4, 4)).unwrap() - 1.0).abs() < 1e-15);
        assert!((nmse(&h, &h.scale(C64::new(2.0, 0.0))).unwrap() - 1.0).abs() < 1e-15);

        // global unitary rotation of both leaves NMSE unchanged
        let e = tensor(&mut rng, 5);
        let u = ComplexMatrix::from_fn(4, 4, |_, _| rng.cn(1.0)).qr().q();
        let rot = |t: &ChannelTensor| ChannelTensor::new(t.iter().map(|m| &u * m).collect()).unwrap();
        assert!((nmse(&h, &e).unwrap() - nmse(&rot(&h), &rot(&e)).unwrap()).abs() < 1e-12);

        let mut slices = h.clone().into_slices();
        slices[2] = ComplexMatrix::zeros(4, 4);
        let partial = ChannelTensor::new(slices).unwrap();
        assert_eq!(nmse(&partial, &partial).unwrap(), 0.0);
        let z = ChannelTensor::zeros(2, 4, 4);
        assert!(nmse(&z, &z).is_err());
    }

    #[test]
    fn aggregation() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(mean_ci95(&[2.0; 10]), Some((2.0, 0.0)));
        assert_eq!(mean_ci95(&[1.0]), None);

        let mut rng = RngStream::new(9);
        let mut widths = Vec::new();
        for _ in 0..200 {
            let v: Vec<f64> = (0..100).map(|_| rng.standard_normal()).collect();
            widths.push(2.0 * mean_ci95(&v).unwrap().1);
        }
        let w = widths.iter().sum::<f64>() / widths.len() as f64;
        assert!((w - 0.392).abs() < 0.25 * 0.392, "{w}");

        let cdf = empirical_cdf(&[5.0]);
        assert_eq!(cdf, vec![(5.0, 1.0)]);
    }

    fn sample_records() -> Vec<MetricRecord> {
        let mut rng = RngStream::new(4);
        let mut out = Vec::new();
        for (i, m) in [Method::Perfect, Method::Mrc, Method::CnnOob].into_iter().enumerate() {
            for s in 0..3 {
                out.push(MetricRecord {
                    method: m,
                    snr_db: -20.0 + 5.0 * s as f64,
                    k_db: 10.0,
                    seed: (i * 10 + s) as u64,
                    nmse: (m != Method::Perfect).then(|| rng.uniform(0.0, 1.0) / 3.0),
                    se: Some(rng.uniform(0.0, 40.0)),
                });
            }
        }
        out
    }

    #[test]
    fn csv_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = sample_records();
        let (c, j) = (dir.path().join("r.csv"), dir.path().join("r.json"));
        write_csv(&c, &recs).unwrap();
        write_json(&j, &recs).unwrap();
        let from_csv = read_csv(&c).unwrap();
        assert_eq!(from_csv, recs);
        assert_eq!(read_json(&j).unwrap(), from_csv);
        let text = std::fs::read_to_string(&c).unwrap();
        assert!(text.starts_with("method,snr_db,k_db,seed,nmse,se\nperfect,-20.0,10.0,0,,"));

        write_csv(&c, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&c).unwrap(), "method,snr_db,k_db,seed,nmse,se\n");
        assert!(read_csv(&c).unwrap().is_empty());
    }

    #[test]
    fn cells_and_cdfs() {
        let mut recs = sample_records();
        recs.extend(sample_records());
        let cells = summarize_cells(&recs, Metric::Se);
        assert_eq!(cells.len(), 9);
        assert!(cells.iter().all(|c| c.count == 2));
        // the perfect-CSI rows carry no NMSE
        assert_eq!(summarize_cells(&recs, Metric::Nmse).len(), 6);
        let cdfs = cdf_by_method(&recs, Metric::Se);
        assert_eq!(cdfs.len(), 3);
        assert_eq!(cdfs[0].method, Method::Perfect);
        assert_eq!(cdfs[0].points.last().unwrap().1, 1.0);
    }
}
