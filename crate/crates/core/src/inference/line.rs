use serde::Serialize;

use super::Covariance;
use crate::error::{Error, Result};

/// The data line `x(z) = a + b z` through the observation, along the test
/// direction in the covariance geometry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub z_obs: f64,
    pub sigma_eta: f64,
}

impl LineParams {
    pub fn point(&self, z: f64) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| a + b * z).collect()
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(x, y)| x * y).sum()
}

pub fn line_params(x: &[f64], eta: &[f64], cov: &Covariance) -> Result<LineParams> {
    if x.len() != eta.len() {
        return Err(Error::shape("eta", format!("data has {} entries, test direction has {}", x.len(), eta.len())));
    }
    let s_eta = cov.apply(eta);
    let var = dot(eta, &s_eta);
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::SingularCovariance(format!("test direction has variance {var} under the covariance")));
    }
    let z_obs = dot(eta, x);
    let b: Vec<f64> = s_eta.iter().map(|v| v / var).collect();
    let a = x.iter().zip(&b).map(|(x, b)| x - b * z_obs).collect();
    Ok(LineParams { a, b, z_obs, sigma_eta: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn unit_direction() {
        let l = line_params(&[3.0, 5.0], &[1.0, 0.0], &Covariance::scalar(1.0).unwrap()).unwrap();
        assert_eq!(l.b, vec![1.0, 0.0]);
        assert_eq!(l.z_obs, 3.0);
        assert_eq!(l.a, vec![0.0, 5.0]);
        assert_eq!(l.sigma_eta, 1.0);
    }

    #[test]
    fn diagonal_covariance() {
        let cov = Covariance::diagonal(vec![1.0, 4.0]).unwrap();
        let l = line_params(&[0.0, 0.0], &[1.0, 1.0], &cov).unwrap();
        assert_relative_eq!(l.b[0], 0.2, max_relative = 1e-15);
        assert_relative_eq!(l.b[1], 0.8, max_relative = 1e-15);
        assert_relative_eq!(l.sigma_eta, 5f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn zero_direction_is_singular() {
        let r = line_params(&[1.0], &[0.0], &Covariance::scalar(1.0).unwrap());
        assert!(matches!(r, Err(Error::SingularCovariance(_))));
    }

    proptest! {
        #[test]
        fn line_reproduces_the_data(
            x in proptest::collection::vec(-5.0f64..5.0, 5),
            eta in proptest::collection::vec(-1.0f64..1.0, 5),
            diag in proptest::collection::vec(0.1f64..3.0, 5),
        ) {
            prop_assume!(eta.iter().any(|e| e.abs() > 1e-3));
            let l = line_params(&x, &eta, &Covariance::diagonal(diag).unwrap()).unwrap();
            let xn: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (p, v) in l.point(l.z_obs).iter().zip(&x) {
                prop_assert!((p - v).abs() <= 1e-10 * v.abs().max(1.0));
            }
            prop_assert!((dot(&eta, &l.b) - 1.0).abs() < 1e-10);
            prop_assert!(dot(&eta, &l.a).abs() < 1e-10 * xn.max(1.0));
        }
    }
}
