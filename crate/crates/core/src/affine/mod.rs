//! Exact propagation of an affine input line `x(z) = a + b z` through a
//! piecewise-linear graph.
//!
//! Every activation is carried as a [`ParamTensor`] (`bias + coeff * z`)
//! together with the z-interval on which the piece signature seen so far
//! stays fixed. Piecewise operators narrow that interval; linear ones leave it
//! alone.

pub(crate) mod pieces;
mod session;

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::tensor::Tensor;

pub use pieces::{abs_piece, leaky_relu_piece, max_piece, relu_piece};
pub use session::{propagate, Propagation, PropagationSession, SessionStats};

/// An affine family of tensors, `bias + coeff * z` elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    bias: Tensor,
    coeff: Tensor,
}

impl ParamTensor {
    pub fn new(bias: Tensor, coeff: Tensor) -> Result<Self> {
        if bias.shape() != coeff.shape() {
            return Err(Error::shape("param tensor", format!("bias {:?} vs coeff {:?}", bias.shape(), coeff.shape())));
        }
        Ok(ParamTensor { bias, coeff })
    }

    /// A tensor that does not move along the line.
    pub fn constant(t: Tensor) -> Self {
        let coeff = Tensor::zeros(t.shape().to_vec());
        ParamTensor { bias: t, coeff }
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn coeff(&self) -> &Tensor {
        &self.coeff
    }

    pub fn shape(&self) -> &[usize] {
        self.bias.shape()
    }

    pub fn len(&self) -> usize {
        self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bias.is_empty()
    }

    pub fn value_at(&self, z: f64) -> Tensor {
        self.bias.zip_with(&self.coeff, |a, b| a + b * z).expect("bias and coeff share a shape")
    }

    pub(crate) fn from_parts(shape: Vec<usize>, bias: Vec<f64>, coeff: Vec<f64>) -> Self {
        ParamTensor {
            bias: Tensor::new(shape.clone(), bias).expect("bias length matches shape"),
            coeff: Tensor::new(shape, coeff).expect("coeff length matches shape"),
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.coeff.is_finite()
    }

    pub(crate) fn scaled(&self, s: f64) -> ParamTensor {
        ParamTensor { bias: self.bias.map(|v| s * v), coeff: self.coeff.map(|v| s * v) }
    }

    pub(crate) fn sub(&self, other: &ParamTensor) -> Result<ParamTensor> {
        Ok(ParamTensor {
            bias: self.bias.zip_with(&other.bias, |x, y| x - y)?,
            coeff: self.coeff.zip_with(&other.coeff, |x, y| x - y)?,
        })
    }

    /// Elementwise absolute value at `z`, narrowing `valid` to the interval on
    /// which every element keeps its sign branch.
    pub(crate) fn abs_at(&self, valid: &mut Interval, z: f64) -> ParamTensor {
        let n = self.len();
        let mut bias = Vec::with_capacity(n);
        let mut coeff = Vec::with_capacity(n);
        for (&a, &b) in self.bias.data().iter().zip(self.coeff.data()) {
            let (a2, b2, iv) = abs_piece(a, b, *valid, z);
            *valid = iv;
            bias.push(a2);
            coeff.push(b2);
        }
        ParamTensor::from_parts(self.shape().to_vec(), bias, coeff)
    }

    pub(crate) fn reshaped(self, shape: Vec<usize>) -> Result<ParamTensor> {
        Ok(ParamTensor { bias: self.bias.reshaped(shape.clone())?, coeff: self.coeff.reshaped(shape)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_at_is_elementwise_affine() {
        let p = ParamTensor::new(Tensor::vector(vec![1.0, -1.0]), Tensor::vector(vec![2.0, 0.5])).unwrap();
        assert_eq!(p.value_at(2.0).data(), &[5.0, 0.0]);
        assert!(ParamTensor::new(Tensor::vector(vec![1.0]), Tensor::vector(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn abs_at_narrows_to_sign_region() {
        let p = ParamTensor::new(Tensor::vector(vec![1.0, -2.0]), Tensor::vector(vec![1.0, 1.0])).unwrap();
        let mut valid = Interval::REAL_LINE;
        let q = p.abs_at(&mut valid, 0.0);
        assert_eq!(valid, Interval::new(-1.0, 2.0));
        assert_eq!(q.bias().data(), &[1.0, 2.0]);
        assert_eq!(q.coeff().data(), &[1.0, -1.0]);
    }
}
