//! Dense `f64` tensors and a tape-based reverse-mode differentiator.
//!
//! Every model and loss in the crate is written against [`Graph`]: a forward
//! pass appends nodes to the tape, and [`Graph::backward`] walks it in
//! reverse to produce gradients for every node that depends on a tracked
//! [`Parameter`](param::Parameter).
//!
//! Storage is row-major. Most operations treat a tensor as a matrix whose
//! row count is the product of all leading extents and whose column count
//! is the last extent.

mod graph;
pub mod param;

pub use graph::{sigmoid, softmax_row, Gradients, Graph, Var};
pub use param::{ParamGrads, ParamId, ParamStore, Parameter};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    /// A `[1, n]` row vector.
    pub fn row(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Tensor::matrix(1, n, values)
    }

    /// An `[n, 1]` column vector.
    pub fn column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Tensor::matrix(n, 1, values)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![value],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Tensor::zeros(vec![n, n])?;
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// Last extent.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("shape is never empty")
    }

    /// Product of all extents but the last.
    pub fn rows(&self) -> usize {
        self.values.len() / self.cols()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn row_slice(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.values[row * c..(row + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests;
