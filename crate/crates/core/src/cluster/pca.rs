use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal axes fitted on a data matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// One retained axis per row, unit length, ordered by explained variance.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the sample covariance for every axis, descending.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn fit(x: &DMatrix<f64>, target_dim: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if target_dim == 0 || target_dim > d {
            return Err(Error::Config(format!(
                "target dimension {target_dim} must be in 1..={d}"
            )));
        }
        if n < target_dim || n < 2 {
            return Err(Error::Config(format!(
                "PCA to {target_dim} dimensions needs at least that many rows (and two), got {n}"
            )));
        }
        let mean: DVector<f64> = x.row_mean().transpose();
        let centered = center(x, &mean);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let total: f64 = cov.diagonal().iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::Degenerate(
                "all rows are identical; nothing to project".into(),
            ));
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("finite eigenvalues")
                .then(a.cmp(&b))
        });
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let components = order[..target_dim]
            .iter()
            .map(|&i| {
                let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                // sign convention: largest-magnitude entry positive
                let pivot =
                    v.iter().enumerate().fold(
                        0,
                        |best, (j, x)| if x.abs() > v[best].abs() { j } else { best },
                    );
                if v[pivot] < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                v
            })
            .collect();
        Ok(PcaModel {
            mean: mean.iter().copied().collect(),
            components,
            eigenvalues,
        })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "PCA fitted on {} columns, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        let mean = DVector::from_column_slice(&self.mean);
        let centered = center(x, &mean);
        let r = self.components.len();
        let w = DMatrix::from_fn(self.mean.len(), r, |i, j| self.components[j][i]);
        Ok(centered * w)
    }

    /// Sum of eigenvalues of the axes that were not retained.
    pub fn discarded_variance(&self) -> f64 {
        self.eigenvalues[self.components.len()..].iter().sum()
    }
}

fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    c
}
