//! PCA feature extraction via eigendecomposition of the sample covariance.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Mean vector plus the top-N_h eigenvectors of the sample covariance
/// (row-orthonormal), with their explained variances.
#[derive(Debug, Clone)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// `[n_h, dim]`, rows orthonormal; signs fixed so each row's
    /// largest-magnitude entry is positive.
    components: DMatrix<f64>,
    explained_variances: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn explained_variances(&self) -> &[f64] {
        &self.explained_variances
    }

    pub(crate) fn from_parts(
        mean: DVector<f64>,
        components: DMatrix<f64>,
        explained_variances: Vec<f64>,
    ) -> Self {
        PcaModel {
            mean,
            components,
            explained_variances,
        }
    }

    /// components · (x − mean).
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape(
                format!("vector of length {}", self.dim()),
                format!("{}", x.len()),
            ));
        }
        let centered = DVector::from_column_slice(x) - &self.mean;
        Ok((&self.components * centered).iter().copied().collect())
    }

    /// mean + componentsᵀ · y; exact inverse when n_h equals the dimension.
    pub fn inverse_transform(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n_components() {
            return Err(Error::shape(
                format!("feature of length {}", self.n_components()),
                format!("{}", y.len()),
            ));
        }
        let x = &self.mean + self.components.transpose() * DVector::from_column_slice(y);
        Ok(x.iter().copied().collect())
    }
}

/// Fits PCA to the rows of `samples`, keeping the top `n_h` components of
/// the (unbiased) sample covariance.
pub fn pca_fit(samples: &[Vec<f64>], n_h: usize) -> Result<PcaModel> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Data("pca_fit needs samples".into()));
    }
    let dim = samples[0].len();
    if n_h > dim {
        return Err(Error::Config(format!(
            "n_h = {n_h} exceeds the input dimension {dim}"
        )));
    }
    if n <= n_h {
        return Err(Error::Data(format!(
            "need more than {n_h} samples, got {n}"
        )));
    }

    let mut mean = DVector::zeros(dim);
    for x in samples {
        mean += DVector::from_column_slice(x);
    }
    mean /= n as f64;

    // Covariance as XcᵀXc/(n−1) through a GEMM on the centered data.
    let mut centered = vec![0.0; n * dim];
    for (i, x) in samples.iter().enumerate() {
        for j in 0..dim {
            centered[i * dim + j] = x[j] - mean[j];
        }
    }
    let mut cov_flat = vec![0.0; dim * dim];
    crate::tensor::matmul_acc(&mut cov_flat, &centered, &centered, dim, n, dim, true, false);
    let cov = DMatrix::from_row_slice(dim, dim, &cov_flat) / (n as f64 - 1.0);
    // Symmetrize to wash out GEMM rounding before the eigendecomposition.
    let cov = (&cov + cov.transpose()) * 0.5;

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });

    let mut components = DMatrix::zeros(n_h, dim);
    let mut variances = Vec::with_capacity(n_h);
    for (row, &idx) in order.iter().take(n_h).enumerate() {
        let col = eig.eigenvectors.column(idx);
        // Deterministic sign: largest-magnitude entry positive.
        let mut arg = 0;
        for j in 1..dim {
            if col[j].abs() > col[arg].abs() {
                arg = j;
            }
        }
        let sign = if col[arg] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..dim {
            components[(row, j)] = sign * col[j];
        }
        variances.push(eig.eigenvalues[idx]);
    }

    Ok(PcaModel::from_parts(mean, components, variances))
}

/// Convenience: transforms a whole sample set.
pub fn pca_transform_all(model: &PcaModel, samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    samples.iter().map(|x| model.transform(x)).collect()
}
