//! Dense row-major tensor over a single scalar type.
//!
//! `Real` is f64 by default; the `f32` feature narrows the whole crate to
//! single precision through the same code path.

use crate::error::{Error, Result};

#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<Real>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                msg: format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], v: Real) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel],
            requires_grad: false,
        }
    }

    pub fn scalar(v: Real) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> Real) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(|i| f(i)).collect(),
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Real {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Value at (c, y, x) of a rank-3 tensor.
    pub fn at3(&self, c: usize, y: usize, x: usize) -> Real {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }

    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: Real) {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(c * self.shape[1] + y) * self.shape[2] + x] = v;
    }

    /// Snap every element to the nearest f32. Parameters live on the f32
    /// grid so checkpoints (stored as f32) round-trip bitwise.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as Real;
        }
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    /// H and W swapped for a rank-3 tensor; test helper for symmetry checks.
    pub fn transpose_hw(&self) -> Tensor {
        assert_eq!(self.shape.len(), 3);
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut out = Tensor::zeros(&[c, w, h]);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.set3(ci, x, y, self.at3(ci, y, x));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data_len() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::new(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("6"));
    }

    #[test]
    fn rank3_indexing_is_row_major() {
        let t = Tensor::from_fn(&[2, 2, 3], |i| i as Real);
        assert_eq!(t.at3(0, 0, 0), 0.0);
        assert_eq!(t.at3(0, 1, 2), 5.0);
        assert_eq!(t.at3(1, 0, 0), 6.0);
    }

    #[test]
    fn quantize_is_idempotent() {
        let mut t = Tensor::from_fn(&[17], |i| (i as Real) * 0.123456789 + 1e-9);
        t.quantize_f32();
        let once = t.clone();
        t.quantize_f32();
        assert_eq!(once, t);
    }

    #[test]
    fn transpose_hw_roundtrip() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as Real);
        assert_eq!(t.transpose_hw().transpose_hw(), t);
    }
}
