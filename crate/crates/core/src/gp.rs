//! Exact GP regression on a precomputed kernel matrix.
//!
//! Classification is multi-output regression on one-hot targets followed by
//! a per-row argmax. One kernel and one noise variance serve every output
//! channel, so the predictive variance is shared across channels.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::kernel_submatrix;
use crate::linalg::{self, Cholesky};

/// Posterior variances below zero by at most this much are clamped to zero.
pub const VARIANCE_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GpPosterior {
    /// `t x c` predictive means.
    pub mean: DMatrix<f64>,
    /// Marginal predictive variance at each test node.
    pub variance: DVector<f64>,
    /// Log marginal likelihood of the training targets.
    pub lml: f64,
}

fn noisy_cholesky(k_train: &DMatrix<f64>, noise_sq: f64) -> Result<Cholesky> {
    if !(noise_sq >= 0.0 && noise_sq.is_finite()) {
        return Err(Error::Parameter(format!("noise variance must be nonnegative, got {noise_sq}")));
    }
    let mut ky = k_train.clone();
    for i in 0..ky.nrows() {
        ky[(i, i)] += noise_sq;
    }
    Cholesky::new(&ky, "training covariance K + noise I")
}

fn lml_from_factor(chol: &Cholesky, y: &DMatrix<f64>) -> f64 {
    let s = y.nrows() as f64;
    let c = y.ncols() as f64;
    let alpha = chol.solve(y);
    let fit: f64 = y.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
    -0.5 * fit - 0.5 * c * chol.log_det() - 0.5 * c * s * (2.0 * PI).ln()
}

/// `Σ_c [-½ yᵀ(K + σ²I)⁻¹y - ½ log|K + σ²I| - (s/2) log 2π]` over the
/// columns of `y`.
pub fn log_marginal_likelihood(k_train: &DMatrix<f64>, y: &DMatrix<f64>, noise_sq: f64) -> Result<f64> {
    let s = k_train.nrows();
    if s == 0 || k_train.ncols() != s || y.nrows() != s {
        return Err(Error::Parameter(format!(
            "kernel {:?} and targets {:?} do not line up",
            k_train.shape(),
            y.shape()
        )));
    }
    let chol = noisy_cholesky(k_train, noise_sq)?;
    Ok(lml_from_factor(&chol, y))
}

/// Posterior at `test_idx` given targets at `train_idx`, zero prior mean.
pub fn posterior(
    k_full: &DMatrix<f64>,
    train_idx: &[usize],
    test_idx: &[usize],
    y_train: &DMatrix<f64>,
    noise_sq: f64,
) -> Result<GpPosterior> {
    if train_idx.is_empty() {
        return Err(Error::Parameter("posterior needs at least one training node".into()));
    }
    if y_train.nrows() != train_idx.len() {
        return Err(Error::Parameter(format!(
            "{} training targets for {} training nodes",
            y_train.nrows(),
            train_idx.len()
        )));
    }
    if let Some(i) = test_idx.iter().find(|i| train_idx.contains(i)) {
        return Err(Error::Parameter(format!("node {i} is in both train and test sets")));
    }
    let k_tt = kernel_submatrix(k_full, train_idx, train_idx)?;
    let k_st = kernel_submatrix(k_full, test_idx, train_idx)?;
    let chol = noisy_cholesky(&k_tt, noise_sq)?;
    let lml = lml_from_factor(&chol, y_train);
    let weights = chol.solve(y_train);
    let mean = linalg::matmul(&k_st, &weights);

    // variance_i = k_ii - ‖L⁻¹ k_i‖²
    let half = chol.solve_lower(&k_st.transpose());
    let mut variance = DVector::zeros(test_idx.len());
    for (i, &node) in test_idx.iter().enumerate() {
        let explained: f64 = half.column(i).norm_squared();
        let v = k_full[(node, node)] - explained;
        if v < -VARIANCE_TOL {
            return Err(Error::Invariant(format!("negative posterior variance {v:e} at node {node}")));
        }
        variance[i] = v.max(0.0);
    }
    if !lml.is_finite() {
        return Err(Error::Invariant(format!("non-finite log marginal likelihood {lml}")));
    }
    Ok(GpPosterior { mean, variance, lml })
}

/// Per-row argmax; ties go to the lowest class index.
pub fn classify(scores: &DMatrix<f64>) -> Vec<usize> {
    scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// One-hot encoding of class labels into an `s x c` target matrix.
pub fn one_hot(labels: &[usize], class_count: usize) -> Result<DMatrix<f64>> {
    let mut y = DMatrix::zeros(labels.len(), class_count);
    for (i, &label) in labels.iter().enumerate() {
        if label >= class_count {
            return Err(Error::Parameter(format!("label {label} out of range for {class_count} classes")));
        }
        y[(i, label)] = 1.0;
    }
    Ok(y)
}
