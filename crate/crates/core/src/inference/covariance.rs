use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Noise covariance of the observed image (or of the stacked test and
/// reference images).
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// `s * I` for any dimension.
    Scalar(f64),
    Diagonal(Vec<f64>),
    /// Symmetric positive-definite matrix.
    Full(DMatrix<f64>),
    /// Block-diagonal `(test, reference)` pair.
    Block(Box<Covariance>, Box<Covariance>),
}

impl Covariance {
    pub fn scalar(var: f64) -> Result<Self> {
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::SingularCovariance(format!("variance must be positive, got {var}")));
        }
        Ok(Covariance::Scalar(var))
    }

    pub fn diagonal(diag: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = diag.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::SingularCovariance(format!("diagonal entry {i} is {v}")));
        }
        Ok(Covariance::Diagonal(diag))
    }

    /// Row-major `n x n` matrix; checked for symmetry and definiteness by a
    /// Cholesky factorization.
    pub fn full(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape("covariance", format!("{} entries do not form a {n}x{n} matrix", data.len())));
        }
        let m = DMatrix::from_row_slice(n, n, &data);
        let scale = m.amax().max(f64::MIN_POSITIVE);
        if (&m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::SingularCovariance("matrix is not symmetric".into()));
        }
        if m.clone().cholesky().is_none() {
            return Err(Error::SingularCovariance("matrix is not positive definite".into()));
        }
        Ok(Covariance::Full(m))
    }

    pub fn block(test: Covariance, reference: Covariance) -> Self {
        Covariance::Block(Box::new(test), Box::new(reference))
    }

    /// Dimension fixed by the representation, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Covariance::Scalar(_) => None,
            Covariance::Diagonal(d) => Some(d.len()),
            Covariance::Full(m) => Some(m.nrows()),
            Covariance::Block(t, r) => Some(t.dim()? + r.dim()?),
        }
    }

    /// Covariance for a vector of length `dim`. A covariance of half that
    /// length is reused for both halves of a stacked test/reference vector.
    pub(crate) fn fitted(&self, dim: usize, stacked: bool) -> Result<Covariance> {
        match self.dim() {
            None => Ok(self.clone()),
            Some(d) if d == dim => Ok(self.clone()),
            Some(d) if stacked && 2 * d == dim => Ok(Covariance::block(self.clone(), self.clone())),
            Some(d) => Err(Error::shape("covariance", format!("covariance has dimension {d}, data has {dim}"))),
        }
    }

    /// `Sigma v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Covariance::Scalar(s) => v.iter().map(|x| s * x).collect(),
            Covariance::Diagonal(d) => v.iter().zip(d).map(|(x, s)| s * x).collect(),
            Covariance::Full(m) => (m * DVector::from_column_slice(v)).data.into(),
            Covariance::Block(t, r) => {
                let k = t.dim().unwrap_or(v.len() / 2);
                let mut out = t.apply(&v[..k]);
                out.extend(r.apply(&v[k..]));
                out
            }
        }
    }
}
