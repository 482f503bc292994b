//! Full-covariance Gaussian mixture model fitted by EM, with the score
//! decomposition at the MAP class, plus PCA feature extraction.

pub mod checkpoint;
mod pca;

pub use pca::{pca_fit, pca_transform_all, PcaModel};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::scoring::ScoreBreakdown;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;

/// Ridge added to every covariance each M-step; keeps factorizations alive
/// on patch data with constant regions.
pub const COV_RIDGE: f64 = 1e-6;

const LN_2PI: f64 = 1.8378770664093453; // ln(2π)

/// Mixture weights w_k on the simplex, mean vectors μ_k and symmetric
/// positive-definite covariances Σ_k, with cached Cholesky factors and
/// log-determinants.
#[derive(Debug, Clone)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    chols: Vec<Cholesky<f64, Dyn>>,
    log_dets: Vec<f64>,
}

/// Per-iteration mean negative log-likelihood recorded by [`em_fit`].
#[derive(Debug, Clone)]
pub struct EmTrace {
    pub mean_nll: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl GmmModel {
    pub fn from_params(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covs.len() != k {
            return Err(Error::Config("mismatched mixture component counts".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Config(format!(
                "weights must be a positive simplex (sum {total})"
            )));
        }
        let dim = means[0].len();
        let mut chols = Vec::with_capacity(k);
        let mut log_dets = Vec::with_capacity(k);
        for (i, cov) in covs.iter().enumerate() {
            if cov.nrows() != dim || cov.ncols() != dim || means[i].len() != dim {
                return Err(Error::Config(format!("component {i}: dimension mismatch")));
            }
            let asym = (cov - cov.transpose()).abs().max();
            if asym > 1e-12 {
                return Err(Error::Config(format!(
                    "component {i}: covariance asymmetric by {asym}"
                )));
            }
            let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
                Error::Numerical(format!("component {i}: covariance not positive definite"))
            })?;
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            chols.push(chol);
            log_dets.push(log_det);
        }
        Ok(GmmModel {
            weights,
            means,
            covs,
            chols,
            log_dets,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covs
    }

    pub fn log_det(&self, k: usize) -> f64 {
        self.log_dets[k]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::shape(
                format!("feature vector of length {}", self.dim()),
                format!("{}", x.len()),
            ));
        }
        Ok(())
    }

    /// ln N(x; μ_k, Σ_k).
    pub fn log_pdf(&self, k: usize, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.means[k];
        let quad = self.quad_form(k, &diff);
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_dets[k] + quad)
    }

    /// (x−μ_k)ᵀ Σ_k⁻¹ (x−μ_k) through the cached factorization.
    fn quad_form(&self, k: usize, diff: &DVector<f64>) -> f64 {
        let solved = self.chols[k].solve(diff);
        diff.dot(&solved)
    }

    /// −log Σ_k w_k N(x; μ_k, Σ_k), stabilized by log-sum-exp. This is the
    /// full mixture NLL, distinct from the MAP-class total of [`Self::score`].
    pub fn nll(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let logs: Vec<f64> = (0..self.n_classes())
            .map(|k| self.weights[k].ln() + self.log_pdf(k, x))
            .collect();
        Ok(-log_sum_exp(&logs))
    }

    /// The MAP class arg max_k p(z=k|x); ties resolve to the lowest index.
    pub fn map_class(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x)?;
        let mut best = 0;
        let mut best_log = f64::NEG_INFINITY;
        for k in 0..self.n_classes() {
            let l = self.weights[k].ln() + self.log_pdf(k, x);
            if l > best_log {
                best_log = l;
                best = k;
            }
        }
        Ok(best)
    }

    /// Score decomposition at the MAP class:
    /// D = −log w_k, A = ½ log((2π)^d |Σ_k|), M = ½ (x−μ_k)ᵀΣ_k⁻¹(x−μ_k).
    pub fn score(&self, x: &[f64]) -> Result<ScoreBreakdown> {
        let k = self.map_class(x)?;
        let d = -self.weights[k].ln();
        let a = 0.5 * (self.dim() as f64 * LN_2PI + self.log_dets[k]);
        let diff = DVector::from_column_slice(x) - &self.means[k];
        let m = 0.5 * self.quad_form(k, &diff);
        ScoreBreakdown::new(d, a, m)
    }

    /// Posterior responsibilities p(z=k|x_n), one simplex row per sample,
    /// computed in log space.
    pub fn e_step(&self, samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.e_step_with_nll(samples)?.0)
    }

    /// Responsibilities plus the mean NLL from the same log-density pass.
    fn e_step_with_nll(&self, samples: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
        let mut out = Vec::with_capacity(samples.len());
        let mut nll_sum = 0.0;
        for x in samples {
            self.check_dim(x)?;
            let logs: Vec<f64> = (0..self.n_classes())
                .map(|k| self.weights[k].ln() + self.log_pdf(k, x))
                .collect();
            let norm = log_sum_exp(&logs);
            nll_sum -= norm;
            out.push(logs.iter().map(|l| (l - norm).exp()).collect());
        }
        Ok((out, nll_sum / samples.len() as f64))
    }

    /// Mean NLL over a sample set.
    pub fn mean_nll(&self, samples: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for x in samples {
            total += self.nll(x)?;
        }
        Ok(total / samples.len() as f64)
    }
}

pub(crate) fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Weighted maximum-likelihood update from responsibilities: w_k is the mean
/// responsibility, means and covariances are responsibility-weighted sample
/// moments; covariances are symmetrized and ridge-regularized.
pub fn m_step(
    samples: &[Vec<f64>],
    resp: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let n = samples.len();
    if n == 0 || resp.len() != n {
        return Err(Error::Config("m_step needs matching samples and responsibilities".into()));
    }
    let k = resp[0].len();
    let dim = samples[0].len();
    for (i, r) in resp.iter().enumerate() {
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "responsibility row {i} sums to {sum}, not 1"
            )));
        }
    }

    let mut weights = vec![0.0; k];
    let mut means = vec![DVector::zeros(dim); k];
    for (x, r) in samples.iter().zip(resp) {
        let xv = DVector::from_column_slice(x);
        for c in 0..k {
            weights[c] += r[c];
            means[c] += r[c] * &xv;
        }
    }
    let masses = weights.clone();
    for c in 0..k {
        if masses[c] < 1e-12 {
            return Err(Error::Numerical(format!("empty class {c} in m_step")));
        }
        means[c] /= masses[c];
        weights[c] /= n as f64;
    }

    let mut covs = vec![DMatrix::zeros(dim, dim); k];
    for (x, r) in samples.iter().zip(resp) {
        let xv = DVector::from_column_slice(x);
        for c in 0..k {
            if r[c] == 0.0 {
                continue;
            }
            let diff = &xv - &means[c];
            covs[c].syger(r[c], &diff, &diff, 1.0);
        }
    }
    for c in 0..k {
        covs[c] /= masses[c];
        // syger fills the lower triangle; mirror it, then add the ridge.
        for i in 0..dim {
            for j in i + 1..dim {
                covs[c][(i, j)] = covs[c][(j, i)];
            }
        }
        for i in 0..dim {
            covs[c][(i, i)] += COV_RIDGE;
        }
    }
    Ok((weights, means, covs))
}

/// Fits a mixture by EM: k-means++-style seeding of the means, global
/// covariance start, uniform weights, then alternating e/m steps until the
/// mean-NLL improvement drops below `tol` or `max_iter` is reached. A class
/// whose responsibility mass collapses is re-seeded from a random sample.
pub fn em_fit(
    samples: &[Vec<f64>],
    n_z: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<(GmmModel, EmTrace)> {
    if samples.len() < n_z {
        return Err(Error::Data(format!(
            "need at least {n_z} samples, got {}",
            samples.len()
        )));
    }
    if n_z == 0 {
        return Err(Error::Config("n_z must be positive".into()));
    }
    let dim = samples[0].len();
    let mut rng = rng_from_seed(seed);

    let global_cov = global_covariance(samples);
    let seeds = kmeans_pp_seeds(samples, n_z, &mut rng);
    let means: Vec<DVector<f64>> = seeds
        .iter()
        .map(|&i| DVector::from_column_slice(&samples[i]))
        .collect();
    let covs = vec![global_cov.clone(); n_z];
    let weights = vec![1.0 / n_z as f64; n_z];
    let mut model = GmmModel::from_params(weights, means, covs)?;

    // The trace records the mean NLL of the model entering each iteration;
    // index 0 scores the initialization. If an M-step ever moves uphill
    // (the ridge makes it an inexact maximizer) the previous model is kept,
    // so the recorded trace is non-increasing by construction.
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut previous: Option<GmmModel> = None;
    loop {
        let (mut resp, nll) = model.e_step_with_nll(samples)?;
        match trace.last() {
            Some(&prev) if nll > prev => {
                model = previous.expect("uphill move implies a previous model");
                converged = true;
                break;
            }
            Some(&prev) if prev - nll < tol => {
                trace.push(nll);
                converged = true;
                break;
            }
            _ => trace.push(nll),
        }
        if iterations == max_iter {
            break;
        }
        previous = Some(model.clone());
        reseed_empty_classes(&mut resp, samples, &mut rng)?;
        let (w, mu, cov) = m_step(samples, &resp)?;
        model = GmmModel::from_params(w, mu, cov)?;
        iterations += 1;
    }
    Ok((
        model,
        EmTrace {
            mean_nll: trace,
            iterations,
            converged,
        },
    ))
}

/// If a class has (near-)zero total responsibility, hard-assign it one
/// random sample so the M-step stays well-posed.
fn reseed_empty_classes(
    resp: &mut [Vec<f64>],
    samples: &[Vec<f64>],
    rng: &mut Rng,
) -> Result<()> {
    let k = resp.first().map_or(0, |r| r.len());
    for c in 0..k {
        let mass: f64 = resp.iter().map(|r| r[c]).sum();
        if mass < 1e-12 {
            let pick = rng.gen_range(0..samples.len());
            for (i, r) in resp.iter_mut().enumerate() {
                if i == pick {
                    r.iter_mut().for_each(|v| *v = 0.0);
                    r[c] = 1.0;
                }
            }
        }
    }
    Ok(())
}

fn global_covariance(samples: &[Vec<f64>]) -> DMatrix<f64> {
    let n = samples.len();
    let dim = samples[0].len();
    let mut mean = DVector::zeros(dim);
    for x in samples {
        mean += DVector::from_column_slice(x);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for x in samples {
        let diff = DVector::from_column_slice(x) - &mean;
        cov.syger(1.0 / n as f64, &diff, &diff, 1.0);
    }
    for i in 0..dim {
        for j in i + 1..dim {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    for i in 0..dim {
        cov[(i, i)] += COV_RIDGE;
    }
    cov
}

/// k-means++ seeding: first center uniform, then each next center drawn with
/// probability proportional to the squared distance to the nearest chosen
/// center.
fn kmeans_pp_seeds(samples: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = samples.len();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.gen_range(0..n));
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|x| sq_dist(x, &samples[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        chosen.push(next);
        for (i, x) in samples.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &samples[next]));
        }
    }
    chosen
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
