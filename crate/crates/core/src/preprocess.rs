//! PCA whitening: project onto the leading principal components and scale
//! each to unit variance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};

/// Eigenvalues below this fraction of the largest count as zero rank.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: DVector<f64>,
    /// `D_out × D_in`, orthonormal rows.
    pub basis: DMatrix<f64>,
    pub scales: DVector<f64>,
}

impl Projection {
    pub fn new(mean: DVector<f64>, basis: DMatrix<f64>, scales: DVector<f64>) -> Result<Self> {
        check_dim(basis.ncols(), mean.len())?;
        check_dim(basis.nrows(), scales.len())?;
        if basis.nrows() > basis.ncols() {
            return Err(Error::invalid("projection cannot increase the dimension"));
        }
        Ok(Self {
            mean,
            basis,
            scales,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            basis: DMatrix::identity(dim, dim),
            scales: DVector::from_element(dim, 1.0),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Applies the projection to every vector of a dataset, keeping labels.
    pub fn apply_dataset(&self, data: &Dataset) -> Result<Dataset> {
        let projected = whiten_apply_all(
            self,
            &data
                .vectors()
                .iter()
                .map(|v| v.features.clone())
                .collect::<Vec<_>>(),
        )?;
        let mut it = projected.into_iter();
        data.map_features(|_| Ok(it.next().expect("one output per vector")))
    }
}

/// Flips `row` so its largest-magnitude entry is positive; near-ties resolve
/// to the first index.
fn fix_sign(mut row: DVector<f64>) -> DVector<f64> {
    let max = row.amax();
    if let Some(k) = row.iter().position(|x| x.abs() >= max * (1.0 - 1e-9)) {
        if row[k] < 0.0 {
            row.neg_mut();
        }
    }
    row
}

/// Fits a whitening projection onto the `d_out` leading components of the
/// sample covariance (normalized by `n - 1`).
pub fn whiten_fit(vectors: &[DVector<f64>], d_out: usize) -> Result<Projection> {
    let first = vectors
        .first()
        .ok_or(Error::Empty("no vectors to fit a projection"))?;
    let d_in = first.len();
    if d_out == 0 || d_out > d_in {
        return Err(Error::invalid(format!(
            "output dimension {d_out} must lie in 1..={d_in}"
        )));
    }
    if vectors.len() <= d_out {
        return Err(Error::invalid(format!(
            "need more than {d_out} vectors, got {}",
            vectors.len()
        )));
    }
    for v in vectors {
        check_dim(d_in, v.len())?;
    }
    let n = vectors.len() as f64;
    let mean = vectors.iter().fold(DVector::zeros(d_in), |acc, v| acc + v) / n;
    let mut centered = DMatrix::zeros(d_in, vectors.len());
    for (c, v) in vectors.iter().enumerate() {
        centered.set_column(c, &(v - &mean));
    }
    let cov = (&centered * centered.transpose()) / (n - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d_in).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&k| eig.eigenvalues[k] > RANK_TOLERANCE * top)
        .count();
    if rank < d_out {
        return Err(Error::RankDeficient {
            rank,
            requested: d_out,
        });
    }
    let floor = RANK_TOLERANCE * top;
    let mut basis = DMatrix::zeros(d_out, d_in);
    let mut scales = DVector::zeros(d_out);
    for (r, &k) in order.iter().take(d_out).enumerate() {
        let row = fix_sign(eig.eigenvectors.column(k).into_owned());
        basis.set_row(r, &row.transpose());
        scales[r] = 1.0 / eig.eigenvalues[k].max(floor).sqrt();
    }
    Projection::new(mean, basis, scales)
}

/// `scales ⊙ (basis · (x − mean))`.
pub fn whiten_apply(p: &Projection, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(p.input_dim(), x.len())?;
    Ok((&p.basis * (x - &p.mean)).component_mul(&p.scales))
}

pub fn whiten_apply_all(p: &Projection, xs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    xs.par_iter().map(|x| whiten_apply(p, x)).collect()
}
