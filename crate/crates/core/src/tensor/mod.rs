//! Dense real tensors and a tape-based reverse-mode differentiation engine.
//!
//! Values are stored row-major. Operations treat a tensor of shape
//! `[.., rows, cols]` as a stack of rows of width `cols`; the only broadcast
//! supported is adding a vector to every row.

mod check;
mod gemm;
mod tape;

pub use check::{finite_diff_grad, max_relative_error};
pub use tape::{Gradients, Tape, Var};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

/// Scalar type the engine runs on. Training uses `f32`, gradient checks `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<R> {
    shape: Vec<usize>,
    values: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: Vec<usize>, values: Vec<R>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 || shape.contains(&0) {
            return Err(Error::ShapeMismatch { op: "new", lhs: shape, rhs: vec![values.len()] });
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::ShapeMismatch { op: "new", lhs: shape, rhs: vec![values.len()] });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, R::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, R::one())
    }

    pub fn full(shape: &[usize], value: R) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), values: vec![value; len] }
    }

    pub fn scalar(value: R) -> Self {
        Self { shape: vec![1], values: vec![value] }
    }

    /// Builds a `[rows, cols]` matrix from nested rows.
    pub fn from_rows(rows: &[Vec<R>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch { expected: cols, found: bad.len() });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[R] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [R] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<R> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Width of the innermost axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    /// Number of rows when all leading axes are flattened.
    pub fn rows(&self) -> usize {
        self.values.len() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[R] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.values.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .map(|v| S::from_f64_lossy(v.to_f64().expect("real")))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Self { shape: self.shape.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> R {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a - *b).abs())
            .fold(R::zero(), R::max)
    }
}

/// Row-wise softmax over the last axis.
pub fn softmax<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = tape.softmax(v, None).expect("unmasked softmax cannot fail");
    tape.value(out).clone()
}

/// Row-wise layer normalization with population variance.
pub fn layer_norm<R: Real>(
    x: &Tensor<R>,
    gain: &Tensor<R>,
    bias: &Tensor<R>,
    eps: R,
) -> Result<Tensor<R>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(gain.clone());
    let b = tape.constant(bias.clone());
    let out = tape.layer_norm(xv, g, b, eps)?;
    Ok(tape.value(out).clone())
}

/// Inverted dropout; the identity outside training mode.
pub fn dropout<R: Real>(
    x: &Tensor<R>,
    p: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Tensor<R>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = tape.dropout(xv, p, training, rng)?;
    Ok(tape.value(out).clone())
}

pub fn matmul<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Result<Tensor<R>> {
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let bv = tape.constant(b.clone());
    let out = tape.matmul(av, bv)?;
    Ok(tape.value(out).clone())
}
