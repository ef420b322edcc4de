use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{Covariance, CovarianceKind, GaussianFactor};

/// Parameters of the two-latent model `x = mu + u_speaker + v_phrase + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoJoBaParams {
    pub mu: DVector<f64>,
    pub sigma_u: Covariance,
    pub sigma_v: Covariance,
    pub sigma_eps: Covariance,
}

impl DoJoBaParams {
    /// Checks shapes; `sigma_eps` must be positive definite, the latent
    /// covariances only semidefinite.
    pub fn new(
        mu: DVector<f64>,
        sigma_u: Covariance,
        sigma_v: Covariance,
        sigma_eps: Covariance,
    ) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::Empty("mean vector"));
        }
        check_dim(d, sigma_u.dim())?;
        check_dim(d, sigma_v.dim())?;
        check_dim(d, sigma_eps.dim())?;
        GaussianFactor::new(&sigma_eps)?;
        Ok(Self {
            mu,
            sigma_u,
            sigma_v,
            sigma_eps,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Full kind if any component is stored densely.
    pub fn kind(&self) -> CovarianceKind {
        if [&self.sigma_u, &self.sigma_v, &self.sigma_eps]
            .iter()
            .all(|c| c.kind() == CovarianceKind::Diagonal)
        {
            CovarianceKind::Diagonal
        } else {
            CovarianceKind::Full
        }
    }

    /// Marginal covariance of a single vector, `Σu + Σv + Σε`.
    pub fn total_covariance(&self) -> Covariance {
        self.sigma_u.add(&self.sigma_v).add(&self.sigma_eps)
    }
}

/// Parameters of the single-latent baseline `x = mu + z_class + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct JBParams {
    pub mu: DVector<f64>,
    pub sigma_z: Covariance,
    pub sigma_eps: Covariance,
}

impl JBParams {
    pub fn new(mu: DVector<f64>, sigma_z: Covariance, sigma_eps: Covariance) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::Empty("mean vector"));
        }
        check_dim(d, sigma_z.dim())?;
        check_dim(d, sigma_eps.dim())?;
        GaussianFactor::new(&sigma_eps)?;
        Ok(Self {
            mu,
            sigma_z,
            sigma_eps,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// The same model written as a two-latent model with `Σv = 0`.
    pub fn as_dojoba(&self) -> DoJoBaParams {
        DoJoBaParams {
            mu: self.mu.clone(),
            sigma_u: self.sigma_z.clone(),
            sigma_v: Covariance::zeros(self.dim(), self.sigma_z.kind()),
            sigma_eps: self.sigma_eps.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn rejects_singular_noise_and_shape_errors() {
        let z = Covariance::zeros(2, CovarianceKind::Diagonal);
        let one = Covariance::isotropic(2, 1.0).unwrap();
        assert!(
            DoJoBaParams::new(dvector![0.0, 0.0], one.clone(), one.clone(), z.clone()).is_err()
        );
        assert!(DoJoBaParams::new(dvector![0.0, 0.0], z.clone(), z.clone(), one.clone()).is_ok());
        let three = Covariance::isotropic(3, 1.0).unwrap();
        assert!(matches!(
            JBParams::new(dvector![0.0, 0.0], three, one),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
