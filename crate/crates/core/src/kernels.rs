//! Kernels over graph nodes.
//!
//! A kernel is assembled from an optional feature-space base kernel `K₁` and
//! an optional spectral graph regularizer `r₂(L)`:
//!
//! * feature-only: `K = K₁`
//! * graph-only: `K = r₂(L)⁻¹`
//! * transductive: `K = [K₁⁻¹ + r₂(L)]⁻¹`, evaluated through the Woodbury
//!   form `K₁ - K₁ (I + r₂(L) K₁)⁻¹ r₂(L) K₁` so that `K₁` itself is never
//!   inverted.
//!
//! Every regularizer is an elementwise function of the Laplacian eigenvalues
//! scaled by `1/σ₂²`.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{cross_sq_distances, SpectralDecomposition};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKernel {
    /// `σ₁² exp(-‖x - x'‖² / 2ℓ²)`
    Rbf,
    /// `σ₁² exp(-‖x - x'‖ / ℓ)`
    Matern12,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// `1 + αλ`
    RegularizedLaplacian,
    /// `exp(αλ)` with `α = σ²/2`
    Diffusion,
    /// `(α - λ)^{-p}`, `α > 2`
    PStepRandomWalk,
    /// `1 / cos(λπ/4)`
    Cosine,
    /// `(2ν/κ² + λ)^{ν/2 + 1/4}`
    GraphMatern,
    /// `softplus(Σᵢ βᵢ λⁱ)` with `degree + 1` coefficients
    SoftplusPolynomial { degree: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FeatureOnly,
    GraphOnly,
    Transductive,
}

/// Which base kernel and graph regularizer make up a kernel, and how they
/// combine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelSpec {
    base: Option<BaseKernel>,
    regularizer: Option<Regularizer>,
    mode: Mode,
}

impl KernelSpec {
    pub fn new(base: Option<BaseKernel>, regularizer: Option<Regularizer>, mode: Mode) -> Result<Self> {
        let ok = match mode {
            Mode::FeatureOnly => base.is_some() && regularizer.is_none(),
            Mode::GraphOnly => base.is_none() && regularizer.is_some(),
            Mode::Transductive => base.is_some() && regularizer.is_some(),
        };
        if !ok {
            return Err(Error::Parameter(format!(
                "inconsistent kernel spec: mode {mode:?} with base {base:?} and regularizer {regularizer:?}"
            )));
        }
        Ok(KernelSpec {
            base,
            regularizer,
            mode,
        })
    }

    pub fn feature_only(base: BaseKernel) -> Self {
        KernelSpec {
            base: Some(base),
            regularizer: None,
            mode: Mode::FeatureOnly,
        }
    }

    pub fn graph_only(regularizer: Regularizer) -> Self {
        KernelSpec {
            base: None,
            regularizer: Some(regularizer),
            mode: Mode::GraphOnly,
        }
    }

    pub fn transductive(base: BaseKernel, regularizer: Regularizer) -> Self {
        KernelSpec {
            base: Some(base),
            regularizer: Some(regularizer),
            mode: Mode::Transductive,
        }
    }

    pub fn base(&self) -> Option<BaseKernel> {
        self.base
    }

    pub fn regularizer(&self) -> Option<Regularizer> {
        self.regularizer
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl FromStr for BaseKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(BaseKernel::Rbf),
            "matern12" => Ok(BaseKernel::Matern12),
            other => Err(Error::Config(format!("unknown base kernel '{other}'"))),
        }
    }
}

impl fmt::Display for BaseKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseKernel::Rbf => "rbf",
            BaseKernel::Matern12 => "matern12",
        })
    }
}

impl Regularizer {
    /// Parses a regularizer name; `degree` is used by the softplus polynomial.
    pub fn parse(name: &str, degree: usize) -> Result<Self> {
        Ok(match name {
            "regularized_laplacian" => Regularizer::RegularizedLaplacian,
            "diffusion" => Regularizer::Diffusion,
            "p_step_random_walk" => Regularizer::PStepRandomWalk,
            "cosine" => Regularizer::Cosine,
            "graph_matern" => Regularizer::GraphMatern,
            "softplus_polynomial" => Regularizer::SoftplusPolynomial { degree },
            other => return Err(Error::Config(format!("unknown regularizer '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::RegularizedLaplacian => "regularized_laplacian",
            Regularizer::Diffusion => "diffusion",
            Regularizer::PStepRandomWalk => "p_step_random_walk",
            Regularizer::Cosine => "cosine",
            Regularizer::GraphMatern => "graph_matern",
            Regularizer::SoftplusPolynomial { .. } => "softplus_polynomial",
        }
    }
}

/// Kernel hyperparameters.
///
/// Positive quantities are stored as natural logs so every value the
/// optimizer can reach is strictly positive. `log_sigma_diff` may be `-inf`
/// (diffusion time zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub log_sigma1_sq: f64,
    pub log_lengthscale: f64,
    pub log_sigma2_sq: f64,
    /// Softplus polynomial coefficients `β₀..β_d`, unconstrained.
    pub betas: Vec<f64>,
    pub log_noise_sq: f64,
    /// `α` for regularized Laplacian, p-step random walk and label propagation.
    pub log_alpha: f64,
    /// Diffusion `σ`; the regularizer uses `α = σ²/2`.
    pub log_sigma_diff: f64,
    pub p_steps: u32,
    pub log_nu: f64,
    pub log_kappa: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            log_sigma1_sq: 0.0,
            log_lengthscale: 0.0,
            log_sigma2_sq: 0.0,
            betas: Vec::new(),
            log_noise_sq: 0.1f64.ln(),
            log_alpha: 0.0,
            log_sigma_diff: 0.0,
            p_steps: 2,
            log_nu: 1.5f64.ln(),
            log_kappa: 0.0,
        }
    }
}

impl HyperParams {
    pub fn sigma1_sq(&self) -> f64 {
        self.log_sigma1_sq.exp()
    }
    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }
    pub fn sigma2_sq(&self) -> f64 {
        self.log_sigma2_sq.exp()
    }
    pub fn noise_sq(&self) -> f64 {
        self.log_noise_sq.exp()
    }
    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
    pub fn sigma_diff(&self) -> f64 {
        self.log_sigma_diff.exp()
    }
    pub fn nu(&self) -> f64 {
        self.log_nu.exp()
    }
    pub fn kappa(&self) -> f64 {
        self.log_kappa.exp()
    }

    pub fn with_sigma1_sq(mut self, v: f64) -> Self {
        self.log_sigma1_sq = v.ln();
        self
    }
    pub fn with_lengthscale(mut self, v: f64) -> Self {
        self.log_lengthscale = v.ln();
        self
    }
    pub fn with_sigma2_sq(mut self, v: f64) -> Self {
        self.log_sigma2_sq = v.ln();
        self
    }
    pub fn with_betas(mut self, betas: Vec<f64>) -> Self {
        self.betas = betas;
        self
    }
    pub fn with_noise_sq(mut self, v: f64) -> Self {
        self.log_noise_sq = v.ln();
        self
    }
    pub fn with_alpha(mut self, v: f64) -> Self {
        self.log_alpha = v.ln();
        self
    }
    pub fn with_sigma_diff(mut self, v: f64) -> Self {
        self.log_sigma_diff = v.ln();
        self
    }
    pub fn with_p_steps(mut self, p: u32) -> Self {
        self.p_steps = p;
        self
    }
    pub fn with_nu(mut self, v: f64) -> Self {
        self.log_nu = v.ln();
        self
    }
    pub fn with_kappa(mut self, v: f64) -> Self {
        self.log_kappa = v.ln();
        self
    }

    /// Rejects NaN or infinite log-values (a non-positive value was set).
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma1_sq", self.log_sigma1_sq),
            ("lengthscale", self.log_lengthscale),
            ("sigma2_sq", self.log_sigma2_sq),
            ("noise_sq", self.log_noise_sq),
            ("alpha", self.log_alpha),
            ("nu", self.log_nu),
            ("kappa", self.log_kappa),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be a finite positive number")));
            }
        }
        if self.log_sigma_diff.is_nan() || self.log_sigma_diff == f64::INFINITY {
            return Err(Error::Parameter("sigma_diff must be finite and nonnegative".into()));
        }
        if let Some(b) = self.betas.iter().find(|b| !b.is_finite()) {
            return Err(Error::Parameter(format!("polynomial coefficient {b} is not finite")));
        }
        Ok(())
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Base-kernel values from squared distances.
pub fn base_kernel_from_sq_dist(base: BaseKernel, hp: &HyperParams, sq: &DMatrix<f64>) -> DMatrix<f64> {
    let s1 = hp.sigma1_sq();
    let ell = hp.lengthscale();
    match base {
        BaseKernel::Rbf => {
            let scale = -0.5 / (ell * ell);
            sq.map(|d2| s1 * (d2 * scale).exp())
        }
        BaseKernel::Matern12 => sq.map(|d2| s1 * (-d2.max(0.0).sqrt() / ell).exp()),
    }
}

/// Base-kernel matrix between the rows of `xa` and the rows of `xb`.
pub fn base_kernel_matrix(
    spec: &KernelSpec,
    hp: &HyperParams,
    xa: &DMatrix<f64>,
    xb: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let base = spec
        .base
        .ok_or_else(|| Error::Parameter("kernel spec has no base kernel".into()))?;
    if xa.ncols() != xb.ncols() {
        return Err(Error::Parameter(format!(
            "feature dimension mismatch: {} vs {}",
            xa.ncols(),
            xb.ncols()
        )));
    }
    hp.validate()?;
    let mut k = base_kernel_from_sq_dist(base, hp, &cross_sq_distances(xa, xb));
    if std::ptr::eq(xa, xb) {
        linalg::symmetrize(&mut k);
    }
    Ok(k)
}

/// `r₂(λ)/σ₂²` for each eigenvalue.
pub fn graph_regularizer_eigen(
    spec: &KernelSpec,
    hp: &HyperParams,
    eigenvalues: &DVector<f64>,
) -> Result<DVector<f64>> {
    let reg = spec
        .regularizer
        .ok_or_else(|| Error::Parameter("kernel spec has no graph regularizer".into()))?;
    regularizer_spectrum(reg, hp, eigenvalues)
}

pub(crate) fn regularizer_spectrum(
    reg: Regularizer,
    hp: &HyperParams,
    eigenvalues: &DVector<f64>,
) -> Result<DVector<f64>> {
    hp.validate()?;
    let inv_var = 1.0 / hp.sigma2_sq();
    let out: DVector<f64> = match reg {
        Regularizer::RegularizedLaplacian => {
            let a = hp.alpha();
            eigenvalues.map(|l| (1.0 + a * l) * inv_var)
        }
        Regularizer::Diffusion => {
            let s = hp.sigma_diff();
            let a = 0.5 * s * s;
            eigenvalues.map(|l| (a * l).exp() * inv_var)
        }
        Regularizer::PStepRandomWalk => {
            let a = hp.alpha();
            if a <= 2.0 {
                return Err(Error::Singularity(format!(
                    "p-step random walk needs alpha > 2 (spectrum reaches 2), got {a}"
                )));
            }
            let p = hp.p_steps as i32;
            if p < 1 {
                return Err(Error::Parameter("p_steps must be at least 1".into()));
            }
            eigenvalues.map(|l| (a - l).powi(-p) * inv_var)
        }
        Regularizer::Cosine => eigenvalues.map(|l| inv_var / (l * FRAC_PI_4).cos()),
        Regularizer::GraphMatern => {
            let (nu, kappa) = (hp.nu(), hp.kappa());
            let shift = 2.0 * nu / (kappa * kappa);
            let power = nu / 2.0 + 0.25;
            eigenvalues.map(|l| (shift + l).powf(power) * inv_var)
        }
        Regularizer::SoftplusPolynomial { degree } => {
            if hp.betas.len() != degree + 1 {
                return Err(Error::Parameter(format!(
                    "degree-{degree} polynomial needs {} coefficients, got {}",
                    degree + 1,
                    hp.betas.len()
                )));
            }
            eigenvalues.map(|l| {
                // Horner
                let poly = hp.betas.iter().rev().fold(0.0, |acc, b| acc * l + b);
                softplus(poly) * inv_var
            })
        }
    };
    if let Some(bad) = out.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Invariant(format!(
            "{} regularizer produced non-positive or non-finite value {bad}",
            reg.name()
        )));
    }
    Ok(out)
}

/// `U diag(r₂(Λ)/σ₂²) Uᵀ`.
pub fn graph_regularizer_matrix(
    spec: &KernelSpec,
    hp: &HyperParams,
    sd: &SpectralDecomposition,
) -> Result<DMatrix<f64>> {
    let r = graph_regularizer_eigen(spec, hp, &sd.eigenvalues)?;
    Ok(sd.compose(&r))
}

/// `r₂(L)⁻¹ = U diag(σ₂²/r₂(Λ)) Uᵀ`.
pub fn graph_only_kernel(spec: &KernelSpec, hp: &HyperParams, sd: &SpectralDecomposition) -> Result<DMatrix<f64>> {
    if spec.mode != Mode::GraphOnly {
        return Err(Error::Parameter(format!("graph-only kernel requested for {:?} spec", spec.mode)));
    }
    let r = graph_regularizer_eigen(spec, hp, &sd.eigenvalues)?;
    Ok(sd.compose(&r.map(|v| 1.0 / v)))
}

/// `K₁ - K₁ (I + R₂K₁)⁻¹ R₂K₁`, which equals `[K₁⁻¹ + R₂]⁻¹`.
///
/// `k1` must be the base Gram matrix over every node in the graph; `r2` the
/// regularizer matrix from [`graph_regularizer_matrix`].
pub fn transductive_kernel(spec: &KernelSpec, k1: &DMatrix<f64>, r2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if spec.mode != Mode::Transductive {
        return Err(Error::Parameter(format!("transductive kernel requested for {:?} spec", spec.mode)));
    }
    let n = k1.nrows();
    if k1.ncols() != n || r2.shape() != (n, n) {
        return Err(Error::Parameter(format!(
            "K1 is {:?} and R2 is {:?}; both must be n x n",
            k1.shape(),
            r2.shape()
        )));
    }
    let r2k1 = linalg::matmul(r2, k1);
    let mut system = r2k1.clone();
    for i in 0..n {
        system[(i, i)] += 1.0;
    }
    let correction = linalg::lu_solve(&system, &r2k1, "transductive kernel (I + R2 K1)")?;
    let mut k = k1 - linalg::matmul(k1, &correction);
    linalg::symmetrize(&mut k);
    Ok(k)
}

/// Full kernel over all nodes for any mode.
pub fn full_kernel(
    spec: &KernelSpec,
    hp: &HyperParams,
    features: &DMatrix<f64>,
    sd: &SpectralDecomposition,
) -> Result<DMatrix<f64>> {
    match spec.mode {
        Mode::FeatureOnly => base_kernel_matrix(spec, hp, features, features),
        Mode::GraphOnly => graph_only_kernel(spec, hp, sd),
        Mode::Transductive => {
            if features.nrows() != sd.n() {
                return Err(Error::Parameter(format!(
                    "{} feature rows but {} graph nodes",
                    features.nrows(),
                    sd.n()
                )));
            }
            let k1 = base_kernel_matrix(spec, hp, features, features)?;
            let r2 = graph_regularizer_matrix(spec, hp, sd)?;
            transductive_kernel(spec, &k1, &r2)
        }
    }
}

/// The block of `k` at the given row and column indices, in the given order.
pub fn kernel_submatrix(k: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
    let (nr, nc) = k.shape();
    if let Some(&bad) = rows.iter().find(|&&i| i >= nr) {
        return Err(Error::Parameter(format!("row index {bad} out of range for {nr} rows")));
    }
    if let Some(&bad) = cols.iter().find(|&&j| j >= nc) {
        return Err(Error::Parameter(format!("column index {bad} out of range for {nc} columns")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| k[(rows[i], cols[j])]))
}

/// Label propagation scores `(1 - α)(I + αL)⁻¹ Y`.
///
/// `y` is `n x c` with one-hot rows on labelled nodes and zero rows
/// elsewhere; the predicted class of a node is the argmax of its row.
pub fn label_propagation(sd: &SpectralDecomposition, alpha: f64, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("label propagation alpha must lie in (0, 1), got {alpha}")));
    }
    if y.nrows() != sd.n() {
        return Err(Error::Parameter(format!("{} label rows for {} nodes", y.nrows(), sd.n())));
    }
    let u = &sd.eigenvectors;
    let mut spectral = linalg::matmul_tn(u, y);
    for (mut row, &lam) in spectral.row_iter_mut().zip(sd.eigenvalues.iter()) {
        row *= (1.0 - alpha) / (1.0 + alpha * lam);
    }
    Ok(linalg::matmul(u, &spectral))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalized_laplacian, spectral_decompose, Graph};
    use approx::assert_relative_eq;

    fn p2_spectrum() -> SpectralDecomposition {
        let g = Graph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        spectral_decompose(&normalized_laplacian(&g)).unwrap()
    }

    #[test]
    fn spec_mode_gating() {
        assert!(KernelSpec::new(Some(BaseKernel::Rbf), None, Mode::FeatureOnly).is_ok());
        assert!(KernelSpec::new(Some(BaseKernel::Rbf), Some(Regularizer::Cosine), Mode::FeatureOnly).is_err());
        assert!(KernelSpec::new(Some(BaseKernel::Rbf), Some(Regularizer::Cosine), Mode::GraphOnly).is_err());
        assert!(KernelSpec::new(None, Some(Regularizer::Cosine), Mode::Transductive).is_err());
    }

    #[test]
    fn rbf_values() {
        let spec = KernelSpec::feature_only(BaseKernel::Rbf);
        let hp = HyperParams::default();
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let k = base_kernel_matrix(&spec, &hp, &x, &x).unwrap();
        assert_relative_eq!(k[(0, 0)], 1.0);
        assert_relative_eq!(k[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(k[(0, 1)], 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn self_similarity_is_sigma1() {
        for base in [BaseKernel::Rbf, BaseKernel::Matern12] {
            let hp = HyperParams::default().with_sigma1_sq(2.5).with_lengthscale(0.3);
            let x = DMatrix::from_row_slice(1, 3, &[0.4, -1.0, 2.0]);
            let k = base_kernel_matrix(&KernelSpec::feature_only(base), &hp, &x, &x).unwrap();
            assert_relative_eq!(k[(0, 0)], 2.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn base_kernel_dimension_mismatch() {
        let spec = KernelSpec::feature_only(BaseKernel::Matern12);
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(2, 3);
        assert!(matches!(
            base_kernel_matrix(&spec, &HyperParams::default(), &a, &b),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn softplus_stable() {
        assert_relative_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-16);
        assert_relative_eq!(softplus(800.0), 800.0);
        assert!(softplus(-700.0) > 0.0);
    }

    #[test]
    fn regularizer_point_values() {
        let lam = DVector::from_vec(vec![0.0, 0.7, 2.0]);
        let flat = KernelSpec::graph_only(Regularizer::SoftplusPolynomial { degree: 2 });
        let hp = HyperParams::default().with_betas(vec![0.0; 3]);
        let r = graph_regularizer_eigen(&flat, &hp, &lam).unwrap();
        // softplus(0) = ln 2
        assert!(r.iter().all(|v| (v - std::f64::consts::LN_2).abs() < 1e-12));

        let rl = KernelSpec::graph_only(Regularizer::RegularizedLaplacian);
        let r = graph_regularizer_eigen(&rl, &HyperParams::default(), &lam).unwrap();
        assert_eq!(r[0], 1.0);
        assert_eq!(r[2], 3.0);
    }

    #[test]
    fn pstep_requires_alpha_above_two() {
        let spec = KernelSpec::graph_only(Regularizer::PStepRandomWalk);
        let lam = DVector::from_vec(vec![0.0, 1.0]);
        let hp = HyperParams::default().with_alpha(2.0);
        assert!(matches!(graph_regularizer_eigen(&spec, &hp, &lam), Err(Error::Singularity(_))));
        let hp = HyperParams::default().with_alpha(3.0).with_p_steps(2);
        let r = graph_regularizer_eigen(&spec, &hp, &lam).unwrap();
        assert_relative_eq!(r[0], 1.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(r[1], 1.0 / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn polynomial_wrong_coefficient_count() {
        let spec = KernelSpec::graph_only(Regularizer::SoftplusPolynomial { degree: 4 });
        let hp = HyperParams::default().with_betas(vec![1.0, 2.0]);
        assert!(graph_regularizer_eigen(&spec, &hp, &DVector::from_vec(vec![0.5])).is_err());
    }

    #[test]
    fn regularizer_matrix_of_isolated_nodes_is_identity() {
        let g = Graph::from_adjacency(DMatrix::zeros(3, 3)).unwrap();
        let sd = spectral_decompose(&normalized_laplacian(&g)).unwrap();
        let spec = KernelSpec::graph_only(Regularizer::RegularizedLaplacian);
        let r2 = graph_regularizer_matrix(&spec, &HyperParams::default(), &sd).unwrap();
        assert_relative_eq!(r2, DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn regularizer_matrix_on_p2() {
        let sd = p2_spectrum();
        let spec = KernelSpec::graph_only(Regularizer::RegularizedLaplacian);
        let r2 = graph_regularizer_matrix(&spec, &HyperParams::default(), &sd).unwrap();
        // I + L
        assert_relative_eq!(r2, DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]), epsilon = 1e-14);
        let vals = linalg::symmetric_eigen(&r2).unwrap().0;
        assert_relative_eq!(vals[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(vals[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn graph_only_on_p2() {
        let sd = p2_spectrum();
        let spec = KernelSpec::graph_only(Regularizer::RegularizedLaplacian);
        let k = graph_only_kernel(&spec, &HyperParams::default(), &sd).unwrap();
        // 2x2 inverse of [[2,-1],[-1,2]] = [[2,1],[1,2]]/3
        let oracle = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]) / 3.0;
        assert_relative_eq!(k, oracle, epsilon = 1e-14);
    }

    #[test]
    fn diffusion_at_zero_time_is_identity() {
        let sd = p2_spectrum();
        let spec = KernelSpec::graph_only(Regularizer::Diffusion);
        let hp = HyperParams::default().with_sigma_diff(0.0);
        let k = graph_only_kernel(&spec, &hp, &sd).unwrap();
        assert_relative_eq!(k, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn graph_only_requires_graph_mode() {
        let sd = p2_spectrum();
        let spec = KernelSpec::transductive(BaseKernel::Rbf, Regularizer::Cosine);
        assert!(graph_only_kernel(&spec, &HyperParams::default(), &sd).is_err());
    }

    #[test]
    fn transductive_scalar_case() {
        let spec = KernelSpec::transductive(BaseKernel::Rbf, Regularizer::RegularizedLaplacian);
        let one = DMatrix::from_element(1, 1, 1.0);
        let k = transductive_kernel(&spec, &one, &one).unwrap();
        assert_relative_eq!(k[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn transductive_shape_mismatch() {
        let spec = KernelSpec::transductive(BaseKernel::Rbf, Regularizer::RegularizedLaplacian);
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::identity(3, 3);
        assert!(matches!(transductive_kernel(&spec, &a, &b), Err(Error::Parameter(_))));
    }

    #[test]
    fn submatrix_selection() {
        let k = DMatrix::from_fn(3, 3, |i, j| (10 * i + j) as f64);
        assert_eq!(kernel_submatrix(&k, &[0, 1, 2], &[0, 1, 2]).unwrap(), k);
        assert_eq!(kernel_submatrix(&k, &[0], &[0]).unwrap()[(0, 0)], 0.0);
        assert_eq!(kernel_submatrix(&k, &[2, 0], &[1]).unwrap(), DMatrix::from_column_slice(2, 1, &[21.0, 1.0]));
        assert!(kernel_submatrix(&k, &[3], &[0]).is_err());
    }

    #[test]
    fn label_propagation_small_alpha_is_identity() {
        let sd = p2_spectrum();
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let s = label_propagation(&sd, 1e-12, &y).unwrap();
        assert_relative_eq!(s, y, epsilon = 1e-10);
    }

    #[test]
    fn label_propagation_single_class() {
        let sd = p2_spectrum();
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let s = label_propagation(&sd, 0.5, &y).unwrap();
        assert!(s[(0, 0)] > s[(0, 1)]);
        assert!(s[(1, 0)] > s[(1, 1)]);
    }

    #[test]
    fn label_propagation_triangle_matches_direct_solve() {
        let g = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
        let l = normalized_laplacian(&g);
        let sd = spectral_decompose(&l).unwrap();
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let alpha = 0.3;
        let s = label_propagation(&sd, alpha, &y).unwrap();
        // oracle: (I + αL) s = (1 - α) y
        let system = DMatrix::identity(3, 3) + &l * alpha;
        let oracle = system.lu().solve(&(&y * (1.0 - alpha))).unwrap();
        assert_relative_eq!(s, oracle, epsilon = 1e-12);
        // symmetric situation: unlabelled node scores tie
        assert_relative_eq!(s[(2, 0)], s[(2, 1)], epsilon = 1e-12);
    }

    #[test]
    fn label_propagation_alpha_range() {
        let sd = p2_spectrum();
        let y = DMatrix::zeros(2, 2);
        assert!(label_propagation(&sd, 0.0, &y).is_err());
        assert!(label_propagation(&sd, 1.0, &y).is_err());
    }
}
