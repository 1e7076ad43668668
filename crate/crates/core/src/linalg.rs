use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub fn frobenius_sq(m: &ComplexMatrix) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum()
}

/// Per-subcarrier channel matrices, all `rows × cols` (M_Rx × M_Tx).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    rows: usize,
    cols: usize,
    slices: Vec<ComplexMatrix>,
}

impl ChannelTensor {
    pub fn new(slices: Vec<ComplexMatrix>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidArgument("channel tensor needs at least one subcarrier".into()))?;
        let (rows, cols) = first.shape();
        if let Some((n, bad)) = slices.iter().enumerate().find(|(_, m)| m.shape() != (rows, cols)) {
            return Err(Error::dims(
                format!("{rows}x{cols}"),
                format!("{}x{} at subcarrier {n}", bad.nrows(), bad.ncols()),
            ));
        }
        Ok(ChannelTensor { rows, cols, slices })
    }

    pub fn zeros(len: usize, rows: usize, cols: usize) -> Self {
        ChannelTensor {
            rows,
            cols,
            slices: vec![ComplexMatrix::zeros(rows, cols); len],
        }
    }

    /// The same matrix repeated on every subcarrier.
    pub fn repeat(m: &ComplexMatrix, len: usize) -> Self {
        ChannelTensor {
            rows: m.nrows(),
            cols: m.ncols(),
            slices: vec![m.clone(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.slices.len(), self.rows, self.cols)
    }

    pub fn slice(&self, n: usize) -> &ComplexMatrix {
        &self.slices[n]
    }

    pub fn slices(&self) -> &[ComplexMatrix] {
        &self.slices
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ComplexMatrix> {
        self.slices.iter()
    }

    pub fn into_slices(self) -> Vec<ComplexMatrix> {
        self.slices
    }

    pub fn ensure_same_shape(&self, other: &ChannelTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }

    /// Entry `(r, c)` across all subcarriers.
    pub fn entry_series(&self, r: usize, c: usize) -> Vec<C64> {
        self.slices.iter().map(|m| m[(r, c)]).collect()
    }

    /// Element-wise `a·self + b·other`.
    pub fn affine(&self, a: f64, other: &ChannelTensor, b: f64) -> Result<ChannelTensor> {
        self.ensure_same_shape(other)?;
        let slices = self
            .slices
            .iter()
            .zip(&other.slices)
            .map(|(x, y)| x * C64::new(a, 0.0) + y * C64::new(b, 0.0))
            .collect();
        Ok(ChannelTensor {
            rows: self.rows,
            cols: self.cols,
            slices,
        })
    }

    pub fn scale(&self, s: C64) -> ChannelTensor {
        ChannelTensor {
            rows: self.rows,
            cols: self.cols,
            slices: self.slices.iter().map(|m| m * s).collect(),
        }
    }

    /// Sub-tensor on the given subcarriers, in the given order.
    pub fn select(&self, subcarriers: &[usize]) -> Result<ChannelTensor> {
        if let Some(&bad) = subcarriers.iter().find(|&&n| n >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "subcarrier {bad} out of range for {} subcarriers",
                self.len()
            )));
        }
        ChannelTensor::new(subcarriers.iter().map(|&n| self.slices[n].clone()).collect())
    }

    pub fn energy(&self) -> f64 {
        self.slices.iter().map(frobenius_sq).sum()
    }
}

impl std::ops::Index<usize> for ChannelTensor {
    type Output = ComplexMatrix;
    fn index(&self, n: usize) -> &ComplexMatrix {
        &self.slices[n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_shapes_rejected() {
        let r = ChannelTensor::new(vec![ComplexMatrix::zeros(2, 2), ComplexMatrix::zeros(2, 3)]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        assert!(ChannelTensor::new(vec![]).is_err());
    }

    #[test]
    fn affine_combination() {
        let a = ChannelTensor::repeat(&ComplexMatrix::from_element(2, 2, ONE), 3);
        let b = a.scale(C64::new(-1.0, 0.0));
        let z = a.affine(0.5, &b, 0.5).unwrap();
        assert_eq!(z.energy(), 0.0);
        let other = ChannelTensor::zeros(4, 2, 2);
        assert!(a.affine(1.0, &other, 1.0).is_err());
    }
}
