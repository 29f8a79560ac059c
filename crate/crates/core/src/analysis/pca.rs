use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k x n`, orthonormal rows in decreasing-variance order.
    pub components: Matrix<f64>,
    /// `m x k` coordinates of the centred input rows.
    pub projections: Matrix<f64>,
    /// All `n` covariance eigenvalues, non-increasing and clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Share of the total variance carried by each of the first `k` components.
    pub explained: Vec<f64>,
}

impl Pca {
    /// Coordinates of extra rows in the fitted basis.
    pub fn project(&self, states: &Matrix<f64>) -> Result<Matrix<f64>> {
        if states.cols() != self.mean.len() {
            return Err(Error::shape("Pca::project", format!("states have {} columns, basis {}", states.cols(), self.mean.len())));
        }
        let centred = Matrix::from_fn(states.rows(), states.cols(), |r, c| states.get(r, c) - self.mean[c]);
        centred.matmul(&self.components.transpose())
    }
}

/// Principal components of the rows of `states`.
pub fn pca_project(states: &Matrix<f64>, k: usize) -> Result<Pca> {
    let (m, n) = states.shape();
    if k > n {
        return Err(Error::Invalid(format!("asked for {k} components of {n}-dimensional states")));
    }
    if m < k + 1 {
        return Err(Error::Invalid(format!("{k} components need at least {} states, got {m}", k + 1)));
    }
    let mean: Vec<f64> = (0..n).map(|c| (0..m).map(|r| states.get(r, c)).sum::<f64>() / m as f64).collect();
    let centred = DMatrix::from_fn(m, n, |r, c| states.get(r, c) - mean[c]);
    let cov = centred.transpose() * &centred / m as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let components = Matrix::from_fn(k, n, |r, c| eig.eigenvectors[(c, order[r])]);
    let explained = eigenvalues[..k].iter().map(|&l| if total > 0.0 { l / total } else { 0.0 }).collect();
    let projections = Matrix::from_fn(m, k, |r, j| (0..n).map(|c| centred[(r, c)] * components.get(j, c)).sum());
    Ok(Pca {
        mean,
        components,
        projections,
        eigenvalues,
        explained,
    })
}
