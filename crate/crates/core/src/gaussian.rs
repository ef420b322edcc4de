//! Covariance representations and log-domain Gaussian densities.
//!
//! Every density is evaluated through a triangular factorization (or, for
//! diagonal covariances, per-dimension variances); no explicit inverse or raw
//! determinant is ever formed. The stacked pair density used by the
//! verification scores exploits the symmetric block structure
//! `[[A, C], [C, A]]`: the orthogonal change of variables
//! `(x_t ± x_s) / sqrt(2)` splits it into two independent Gaussians with
//! covariances `A + C` and `A - C`, which for diagonal blocks reduces to one
//! exact 2x2 computation per dimension.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative variance floor, as a fraction of `trace / D`.
pub const RELATIVE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Diagonal,
    Full,
}

impl std::str::FromStr for CovarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diag" | "diagonal" => Ok(CovarianceKind::Diagonal),
            "full" => Ok(CovarianceKind::Full),
            other => Err(Error::invalid(format!("unknown covariance kind {other:?}"))),
        }
    }
}

/// A symmetric positive semidefinite covariance, stored either as its
/// diagonal or as a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn diagonal(values: DVector<f64>) -> Result<Self> {
        if let Some(d) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NotPositiveDefinite {
                pivot: d,
                value: values[d],
            });
        }
        Ok(Covariance::Diagonal(values))
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::diagonal(DVector::from_element(dim, variance))
    }

    /// Dense covariance; the input must be symmetric within 1e-12 relative.
    pub fn full(matrix: DMatrix<f64>) -> Result<Self> {
        check_dim(matrix.nrows(), matrix.ncols())?;
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        for r in 0..matrix.nrows() {
            for c in 0..r {
                if (matrix[(r, c)] - matrix[(c, r)]).abs() > 1e-12 * scale {
                    return Err(Error::invalid(format!(
                        "covariance is not symmetric at ({r}, {c})"
                    )));
                }
            }
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance has non-finite entries"));
        }
        Ok(Covariance::Full(symmetrize(matrix)))
    }

    pub fn zeros(dim: usize, kind: CovarianceKind) -> Self {
        match kind {
            CovarianceKind::Diagonal => Covariance::Diagonal(DVector::zeros(dim)),
            CovarianceKind::Full => Covariance::Full(DMatrix::zeros(dim, dim)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    pub fn kind(&self) -> CovarianceKind {
        match self {
            Covariance::Diagonal(_) => CovarianceKind::Diagonal,
            Covariance::Full(_) => CovarianceKind::Full,
        }
    }

    pub fn to_full(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(v),
            Covariance::Full(m) => m.clone(),
        }
    }

    pub fn diagonal_values(&self) -> DVector<f64> {
        match self {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Full(m) => m.diagonal(),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            Covariance::Diagonal(v) => v.sum(),
            Covariance::Full(m) => m.trace(),
        }
    }

    /// Converts to the requested storage; full to diagonal drops the
    /// off-diagonal entries.
    pub fn to_kind(&self, kind: CovarianceKind) -> Covariance {
        match (self, kind) {
            (Covariance::Diagonal(_), CovarianceKind::Diagonal)
            | (Covariance::Full(_), CovarianceKind::Full) => self.clone(),
            (_, CovarianceKind::Diagonal) => Covariance::Diagonal(self.diagonal_values()),
            (_, CovarianceKind::Full) => Covariance::Full(self.to_full()),
        }
    }

    /// Element-wise sum; the result is diagonal only if both operands are.
    pub fn add(&self, other: &Covariance) -> Covariance {
        match (self, other) {
            (Covariance::Diagonal(a), Covariance::Diagonal(b)) => Covariance::Diagonal(a + b),
            _ => Covariance::Full(self.to_full() + other.to_full()),
        }
    }

    /// Floors the variances (diagonal) or eigenvalues (full) at
    /// `max(abs_floor, RELATIVE_FLOOR * trace / D)`.
    pub fn floored(&self, abs_floor: f64) -> Covariance {
        let dim = self.dim().max(1);
        let floor = abs_floor.max(RELATIVE_FLOOR * self.trace() / dim as f64);
        match self {
            Covariance::Diagonal(v) => Covariance::Diagonal(v.map(|x| x.max(floor))),
            Covariance::Full(m) => {
                let eig = SymmetricEigen::new(symmetrize(m.clone()));
                if eig.eigenvalues.iter().all(|&l| l >= floor) {
                    return Covariance::Full(symmetrize(m.clone()));
                }
                let vals = eig.eigenvalues.map(|l| l.max(floor));
                let rebuilt = &eig.eigenvectors
                    * DMatrix::from_diagonal(&vals)
                    * eig.eigenvectors.transpose();
                Covariance::Full(symmetrize(rebuilt))
            }
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        GaussianFactor::new(self).is_ok()
    }
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Lower Cholesky factor; fails with the index of the first non-positive
/// pivot.
pub fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    check_dim(n, m.ncols())?;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: pivot,
            });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// A zero-mean Gaussian prepared for repeated density evaluation.
#[derive(Debug, Clone)]
pub struct GaussianFactor {
    repr: FactorRepr,
    log_det: f64,
}

#[derive(Debug, Clone)]
enum FactorRepr {
    Diagonal(DVector<f64>),
    Cholesky(DMatrix<f64>),
}

impl GaussianFactor {
    pub fn new(cov: &Covariance) -> Result<Self> {
        match cov {
            Covariance::Diagonal(v) => {
                let mut log_det = 0.0;
                for (d, &var) in v.iter().enumerate() {
                    if !(var > 0.0) || !var.is_finite() {
                        return Err(Error::NotPositiveDefinite {
                            pivot: d,
                            value: var,
                        });
                    }
                    log_det += var.ln();
                }
                Ok(Self {
                    repr: FactorRepr::Diagonal(v.map(|x| 1.0 / x)),
                    log_det,
                })
            }
            Covariance::Full(m) => {
                let l = cholesky(m)?;
                let log_det = 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
                Ok(Self {
                    repr: FactorRepr::Cholesky(l),
                    log_det,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            FactorRepr::Diagonal(v) => v.len(),
            FactorRepr::Cholesky(l) => l.nrows(),
        }
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `zᵀ Σ⁻¹ z`.
    pub fn mahalanobis(&self, z: &DVector<f64>) -> f64 {
        match &self.repr {
            FactorRepr::Diagonal(inv) => z.iter().zip(inv.iter()).map(|(a, b)| a * a * b).sum(),
            FactorRepr::Cholesky(l) => {
                let w = l
                    .solve_lower_triangular(z)
                    .expect("Cholesky factor has a positive diagonal");
                w.norm_squared()
            }
        }
    }

    /// Log density of a centered vector.
    pub fn log_density(&self, centered: &DVector<f64>) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + self.mahalanobis(centered))
    }
}

/// `log N(x | mean, cov)`.
pub fn log_gaussian(x: &DVector<f64>, mean: &DVector<f64>, cov: &Covariance) -> Result<f64> {
    check_dim(cov.dim(), x.len())?;
    check_dim(cov.dim(), mean.len())?;
    Ok(GaussianFactor::new(cov)?.log_density(&(x - mean)))
}

/// The stacked density of `[x_t; x_s]` with mean `[mu; mu]` and covariance
/// `[[A, C], [C, A]]`, prepared once and evaluated on many pairs.
#[derive(Debug, Clone)]
pub struct PairGaussian {
    plus: GaussianFactor,
    minus: GaussianFactor,
}

impl PairGaussian {
    pub fn new(diag_block: &Covariance, off_block: &Covariance) -> Result<Self> {
        check_dim(diag_block.dim(), off_block.dim())?;
        match (diag_block, off_block) {
            (Covariance::Diagonal(a), Covariance::Diagonal(c)) => {
                // One 2x2 block [[a, c], [c, a]] per dimension, eigenvalues a ± c.
                let (mut plus, mut minus) = (a.clone(), a.clone());
                for d in 0..a.len() {
                    plus[d] = a[d] + c[d];
                    minus[d] = a[d] - c[d];
                }
                Ok(Self {
                    plus: GaussianFactor::new(&Covariance::Diagonal(plus))?,
                    minus: GaussianFactor::new(&Covariance::Diagonal(minus))?,
                })
            }
            _ => {
                let a = diag_block.to_full();
                let c = off_block.to_full();
                Ok(Self {
                    plus: GaussianFactor::new(&Covariance::Full(&a + &c))?,
                    minus: GaussianFactor::new(&Covariance::Full(&a - &c))?,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.plus.dim()
    }

    /// Log density given the centered vectors `x_t - mu` and `x_s - mu`.
    pub fn log_density_centered(&self, dt: &DVector<f64>, ds: &DVector<f64>) -> f64 {
        let sum = (dt + ds) * std::f64::consts::FRAC_1_SQRT_2;
        let diff = (dt - ds) * std::f64::consts::FRAC_1_SQRT_2;
        self.plus.log_density(&sum) + self.minus.log_density(&diff)
    }

    pub fn log_density(
        &self,
        x_t: &DVector<f64>,
        x_s: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> Result<f64> {
        check_dim(self.dim(), x_t.len())?;
        check_dim(self.dim(), x_s.len())?;
        check_dim(self.dim(), mu.len())?;
        Ok(self.log_density_centered(&(x_t - mu), &(x_s - mu)))
    }
}

/// Log density of `[x_t; x_s]` under mean `[mu; mu]` and covariance
/// `[[A, C], [C, A]]`.
pub fn log_gaussian_pair(
    x_t: &DVector<f64>,
    x_s: &DVector<f64>,
    mu: &DVector<f64>,
    diag_block: &Covariance,
    off_block: &Covariance,
) -> Result<f64> {
    PairGaussian::new(diag_block, off_block)?.log_density(x_t, x_s, mu)
}

/// `log Σ exp(values)`; `-inf` for an empty slice or all `-inf` inputs.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
