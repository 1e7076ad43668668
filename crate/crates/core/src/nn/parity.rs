//! Cross-implementation parity vectors.
//!
//! A parity file is a record file of kind `parity` with two fields per
//! record: `input` (`C·H·W` values, channel-major) and `output` (`2·H·W`
//! values, the network's tanh output before `s_out` scaling).

use std::path::Path;

use super::infer::forward_raw;
use super::model::ModelPackage;
use super::tensor::FeatureTensor;
use super::ModelError;
use crate::error::{Error, Result};
use crate::format::{read_records, FieldSpec, FileHeader, RecordWriter};

#[derive(Debug, Clone, PartialEq)]
pub struct ParityVector {
    pub input: FeatureTensor,
    pub output: Vec<f64>,
}

pub fn write_parity_vectors(path: impl AsRef<Path>, vectors: &[ParityVector]) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = match vectors.first() {
        Some(v) => v.input.shape(),
        None => (1, 1, 1),
    };
    if let Some(bad) = vectors
        .iter()
        .find(|v| v.input.shape() != (c, h, w) || v.output.len() != 2 * h * w)
    {
        return Err(Error::dims(
            format!("input {:?}, output {}", (c, h, w), 2 * h * w),
            format!("input {:?}, output {}", bad.input.shape(), bad.output.len()),
        ));
    }
    let header = FileHeader::new(
        "parity",
        h,
        w,
        vectors.len(),
        vec![FieldSpec::new("input", c * h * w), FieldSpec::new("output", 2 * h * w)],
    );
    let mut out = RecordWriter::create(path, &header)?;
    for v in vectors {
        let rec: Vec<f32> = v.input.data().iter().chain(&v.output).map(|x| *x as f32).collect();
        out.write_record(&rec)?;
    }
    out.finish()
}

pub fn read_parity_vectors(path: impl AsRef<Path>) -> Result<Vec<ParityVector>> {
    let path = path.as_ref();
    let file = read_records(path)?;
    file.header.expect_kind(path, "parity")?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let (h, w) = (file.header.m_rx, file.header.m_tx);
    let (in_off, in_len) = file.header.field("input").ok_or_else(|| bad("no input field".into()))?;
    let (out_off, out_len) = file.header.field("output").ok_or_else(|| bad("no output field".into()))?;
    if h == 0 || w == 0 || in_len % (h * w) != 0 || out_len != 2 * h * w {
        return Err(bad(format!("field sizes {in_len}/{out_len} do not fit {h}x{w}")));
    }
    let c = in_len / (h * w);
    file.records()
        .map(|r| {
            let input = r[in_off..in_off + in_len].iter().map(|v| *v as f64).collect();
            Ok(ParityVector {
                input: FeatureTensor::new(c, h, w, input).map_err(|e| bad(e.to_string()))?,
                output: r[out_off..out_off + out_len].iter().map(|v| *v as f64).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityReport {
    pub count: usize,
    /// Largest `‖y - y_ref‖₂ / ‖y_ref‖₂` over the vectors.
    pub max_rel_error: f64,
    /// Vectors whose relative error exceeds the tolerance.
    pub failures: usize,
}

impl ParityReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn check_parity(model: &ModelPackage, vectors: &[ParityVector], tolerance: f64) -> Result<ParityReport, ModelError> {
    let mut report = ParityReport {
        count: vectors.len(),
        max_rel_error: 0.0,
        failures: 0,
    };
    for v in vectors {
        let y = forward_raw(model, &v.input)?;
        if y.data().len() != v.output.len() {
            return Err(ModelError::InputShape {
                expected: format!("{} reference outputs", y.data().len()),
                actual: v.output.len().to_string(),
            });
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (a, b) in y.data().iter().zip(&v.output) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        let rel = num.sqrt() / den.sqrt().max(1e-12);
        report.max_rel_error = report.max_rel_error.max(rel);
        if !(rel <= tolerance) {
            report.failures += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::infer::tests::naive_forward;
    use crate::nn::Variant;
    use crate::rng::RngStream;

    fn vectors(model: &ModelPackage, k: usize, rng: &mut RngStream) -> Vec<ParityVector> {
        let (h, w) = model.shape();
        let c = model.input_channels();
        (0..k)
            .map(|_| {
                let data: Vec<f64> = (0..c * h * w).map(|_| rng.standard_normal() as f32 as f64).collect();
                let input = FeatureTensor::new(c, h, w, data).unwrap();
                let output = naive_forward(model, &input);
                ParityVector { input, output }
            })
            .collect()
    }

    #[test]
    fn parity_round_trip_and_check() {
        let mut rng = RngStream::new(2);
        let model = ModelPackage::random_cnn_with(Variant::Oob, 8, 8, 8, 3, &mut rng).unwrap();
        let vs = vectors(&model, 16, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("parity.bin");
        write_parity_vectors(&p, &vs).unwrap();
        let back = read_parity_vectors(&p).unwrap();
        assert_eq!(back.len(), 16);
        let report = check_parity(&model, &back, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");

        let mut wrong = back.clone();
        wrong[3].output.iter_mut().for_each(|v| *v = -*v);
        let report = check_parity(&model, &wrong, 1e-4).unwrap();
        assert_eq!(report.failures, 1);
    }

    #[test]
    fn empty_parity_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("parity.bin");
        write_parity_vectors(&p, &[]).unwrap();
        assert!(read_parity_vectors(&p).unwrap().is_empty());
    }
}
