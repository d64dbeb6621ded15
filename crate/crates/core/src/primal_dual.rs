//! Primal-dual points and the η-weighted norm used for all tracking
//! distances: ‖z‖_η = sqrt(‖x‖² + η⁻¹‖λ‖²).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A primal-dual pair z = (x, λ) with λ in the nonnegative orthant.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalDual<R: Scalar> {
    pub x: DVector<R>,
    pub lambda: DVector<R>,
}

impl<R: Scalar> PrimalDual<R> {
    /// Builds a point, enforcing n ≥ 1 and λ ≥ 0.
    pub fn new(x: DVector<R>, lambda: DVector<R>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::DimensionMismatch(
                "primal dimension must be at least 1".into(),
            ));
        }
        if let Some(i) = lambda.iter().position(|v| *v < R::zero()) {
            return Err(Error::InvalidParameters(format!(
                "lambda[{i}] is negative"
            )));
        }
        Ok(Self { x, lambda })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            lambda: DVector::zeros(m),
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn m(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.lambda.iter()).all(|v| v.is_finite())
    }

    /// Plain Euclidean norm of the stacked vector (x, λ).
    pub fn norm(&self) -> R {
        (self.x.norm_squared() + self.lambda.norm_squared()).sqrt()
    }

    /// Componentwise difference, for forming tracking errors.
    pub fn sub(&self, other: &Self) -> Self {
        Self {
            x: &self.x - &other.x,
            lambda: &self.lambda - &other.lambda,
        }
    }

    /// Name of the first non-finite component, if any ("x[i]" / "lambda[i]").
    pub fn first_non_finite(&self) -> Option<String> {
        if let Some(i) = self.x.iter().position(|v| !v.is_finite()) {
            return Some(format!("x[{i}]"));
        }
        if let Some(i) = self.lambda.iter().position(|v| !v.is_finite()) {
            return Some(format!("lambda[{i}]"));
        }
        None
    }
}

/// The dual weighting of the primal-dual norm; η must be positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EtaNorm<R: Scalar> {
    eta: R,
}

impl<R: Scalar> EtaNorm<R> {
    pub fn new(eta: R) -> Result<Self> {
        if !eta.is_finite() || eta <= R::zero() {
            return Err(Error::InvalidParameters(format!(
                "eta must be a positive finite real, got {}",
                crate::scalar::as_f64(eta)
            )));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> R {
        self.eta
    }

    /// ‖z‖_η; pure evaluation, propagates non-finite inputs.
    pub fn norm(&self, z: &PrimalDual<R>) -> R {
        (z.x.norm_squared() + z.lambda.norm_squared() / self.eta).sqrt()
    }

    /// ‖a − b‖_η.
    pub fn dist(&self, a: &PrimalDual<R>, b: &PrimalDual<R>) -> R {
        self.norm(&a.sub(b))
    }
}

/// Validated η-norm evaluation: errors on non-finite entries.
pub fn eta_norm<R: Scalar>(z: &PrimalDual<R>, eta: R) -> Result<R> {
    if let Some(name) = z.first_non_finite() {
        return Err(Error::NonFinite(format!("entry {name}")));
    }
    Ok(EtaNorm::new(eta)?.norm(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn pure_primal_case() {
        let z = PrimalDual::new(dvector![3.0, 4.0], dvector![]).unwrap();
        assert_relative_eq!(eta_norm(&z, 1.0).unwrap(), 5.0);
    }

    #[test]
    fn dual_weighting() {
        let z = PrimalDual::new(dvector![0.0], dvector![2.0]).unwrap();
        assert_relative_eq!(eta_norm(&z, 4.0).unwrap(), 1.0);
    }

    #[test]
    fn mixed_point() {
        let z = PrimalDual::new(dvector![1.0], dvector![2.0]).unwrap();
        assert_relative_eq!(eta_norm(&z, 0.25).unwrap(), 17.0_f64.sqrt());
    }

    #[test]
    fn zero_iff_origin() {
        let z = PrimalDual::<f64>::zeros(2, 1);
        assert_eq!(eta_norm(&z, 0.3).unwrap(), 0.0);
        let z = PrimalDual::new(dvector![0.0, 1e-300], dvector![0.0]).unwrap();
        assert!(eta_norm(&z, 0.3).unwrap() > 0.0);
    }

    #[test]
    fn rejects_non_finite_and_bad_eta() {
        let z = PrimalDual::new(dvector![f64::NAN], dvector![]).unwrap();
        assert!(matches!(eta_norm(&z, 1.0), Err(Error::NonFinite(_))));
        let z = PrimalDual::new(dvector![1.0], dvector![]).unwrap();
        assert!(eta_norm(&z, 0.0).is_err());
        assert!(eta_norm(&z, -1.0).is_err());
    }

    #[test]
    fn rejects_negative_multiplier() {
        assert!(PrimalDual::new(dvector![1.0], dvector![-0.1]).is_err());
    }

    #[test]
    fn works_at_f32() {
        let z = PrimalDual::new(dvector![3.0f32, 4.0], dvector![]).unwrap();
        assert!((eta_norm(&z, 1.0f32).unwrap() - 5.0).abs() < 1e-6);
    }
}
