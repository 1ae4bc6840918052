//! Kernel hyperparameter fitting by maximizing the training log marginal
//! likelihood.
//!
//! Positive parameters live in log-space, polynomial coefficients in raw
//! space. [`TrainingProblem`] supplies exact gradients; plain closures get
//! central differences. The ascent is an Adam-style per-coordinate step with
//! accept/reject so accepted steps never lower the objective.
//!
//! The transductive kernel's training block depends on every node, so each
//! evaluation is cubic in the graph size. [`TrainingProblem`] works in the
//! Laplacian eigenbasis: with `R₂ = VVᵀ`, `V = U diag(√ρ)`, the training
//! block is `K₁[S,S] - K₁[S,:]V (I + VᵀK₁V)⁻¹ VᵀK₁[:,S]`, and `UᵀGU` (which
//! only depends on the lengthscale) is cached across evaluations.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{cross_sq_distances, SpectralDecomposition};
use crate::gp::log_marginal_likelihood;
use crate::kernels::{self, base_kernel_from_sq_dist, regularizer_spectrum, BaseKernel, HyperParams, KernelSpec, Mode, Regularizer};
use crate::linalg::{self, Cholesky};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamName {
    LogSigma1Sq,
    LogLengthscale,
    LogSigma2Sq,
    LogAlpha,
    LogSigmaDiff,
    LogNu,
    LogKappa,
    Beta(usize),
    LogNoiseSq,
}

impl ParamName {
    pub fn is_log(&self) -> bool {
        !matches!(self, ParamName::Beta(_))
    }

    pub fn label(&self) -> String {
        match self {
            ParamName::LogSigma1Sq => "log_sigma1_sq".into(),
            ParamName::LogLengthscale => "log_lengthscale".into(),
            ParamName::LogSigma2Sq => "log_sigma2_sq".into(),
            ParamName::LogAlpha => "log_alpha".into(),
            ParamName::LogSigmaDiff => "log_sigma_diff".into(),
            ParamName::LogNu => "log_nu".into(),
            ParamName::LogKappa => "log_kappa".into(),
            ParamName::Beta(i) => format!("beta_{i}"),
            ParamName::LogNoiseSq => "log_noise_sq".into(),
        }
    }

    fn get(&self, hp: &HyperParams) -> f64 {
        match *self {
            ParamName::LogSigma1Sq => hp.log_sigma1_sq,
            ParamName::LogLengthscale => hp.log_lengthscale,
            ParamName::LogSigma2Sq => hp.log_sigma2_sq,
            ParamName::LogAlpha => hp.log_alpha,
            ParamName::LogSigmaDiff => hp.log_sigma_diff,
            ParamName::LogNu => hp.log_nu,
            ParamName::LogKappa => hp.log_kappa,
            ParamName::Beta(i) => hp.betas[i],
            ParamName::LogNoiseSq => hp.log_noise_sq,
        }
    }

    fn set(&self, hp: &mut HyperParams, v: f64) {
        match *self {
            ParamName::LogSigma1Sq => hp.log_sigma1_sq = v,
            ParamName::LogLengthscale => hp.log_lengthscale = v,
            ParamName::LogSigma2Sq => hp.log_sigma2_sq = v,
            ParamName::LogAlpha => hp.log_alpha = v,
            ParamName::LogSigmaDiff => hp.log_sigma_diff = v,
            ParamName::LogNu => hp.log_nu = v,
            ParamName::LogKappa => hp.log_kappa = v,
            ParamName::Beta(i) => hp.betas[i] = v,
            ParamName::LogNoiseSq => hp.log_noise_sq = v,
        }
    }
}

/// Which hyperparameters are free for a kernel spec, in packing order, plus
/// the values of everything held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    names: Vec<ParamName>,
    template: HyperParams,
}

impl ParamLayout {
    pub fn new(spec: &KernelSpec, mut template: HyperParams) -> Self {
        let mut names = Vec::new();
        if spec.base().is_some() {
            names.push(ParamName::LogSigma1Sq);
            names.push(ParamName::LogLengthscale);
        }
        if let Some(reg) = spec.regularizer() {
            names.push(ParamName::LogSigma2Sq);
            match reg {
                Regularizer::RegularizedLaplacian | Regularizer::PStepRandomWalk => names.push(ParamName::LogAlpha),
                Regularizer::Diffusion => names.push(ParamName::LogSigmaDiff),
                Regularizer::Cosine => {}
                Regularizer::GraphMatern => {
                    names.push(ParamName::LogNu);
                    names.push(ParamName::LogKappa);
                }
                Regularizer::SoftplusPolynomial { degree } => {
                    template.betas.resize(degree + 1, 0.0);
                    names.extend((0..=degree).map(ParamName::Beta));
                }
            }
        }
        names.push(ParamName::LogNoiseSq);
        ParamLayout { names, template }
    }

    pub fn names(&self) -> &[ParamName] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: ParamName) -> Option<usize> {
        self.names.iter().position(|&n| n == name)
    }

    pub fn template(&self) -> &HyperParams {
        &self.template
    }
}

/// Flat optimization vector tied to its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParamVector {
    pub fn pack(layout: Arc<ParamLayout>, hp: &HyperParams) -> Self {
        let mut full = hp.clone();
        if full.betas.len() < layout.template.betas.len() {
            full.betas.resize(layout.template.betas.len(), 0.0);
        }
        let values = layout.names.iter().map(|n| n.get(&full)).collect();
        ParamVector { values, layout }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Parameter(format!(
                "expected {} parameters, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn unpack(&self) -> HyperParams {
        unpack_values(&self.layout, &self.values)
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    /// `(name, value)` pairs with log-space entries exponentiated.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        self.layout
            .names
            .iter()
            .zip(&self.values)
            .map(|(n, &v)| match n {
                ParamName::Beta(_) => (n.label(), v),
                _ => (n.label().trim_start_matches("log_").to_string(), v.exp()),
            })
            .collect()
    }
}

fn unpack_values(layout: &ParamLayout, values: &[f64]) -> HyperParams {
    let mut hp = layout.template.clone();
    for (name, &v) in layout.names.iter().zip(values) {
        name.set(&mut hp, v);
    }
    hp
}

fn scale_rows(m: &DMatrix<f64>, by: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut row, &f) in out.row_iter_mut().zip(by.iter()) {
        row *= f;
    }
    out
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `∂ρₖ/∂θ` for one packed regularizer parameter, where `ρ` is the
/// regularizer spectrum already evaluated at `hp`.
fn spectrum_sensitivity(
    reg: Regularizer,
    hp: &HyperParams,
    eigenvalues: &DVector<f64>,
    rho: &DVector<f64>,
    name: ParamName,
) -> DVector<f64> {
    let inv_var = 1.0 / hp.sigma2_sq();
    match (name, reg) {
        (ParamName::LogSigma2Sq, _) => -rho,
        (ParamName::LogAlpha, Regularizer::RegularizedLaplacian) => eigenvalues * (hp.alpha() * inv_var),
        (ParamName::LogAlpha, Regularizer::PStepRandomWalk) => {
            let a = hp.alpha();
            let p = hp.p_steps as f64;
            rho.zip_map(eigenvalues, |r, l| -p * a * r / (a - l))
        }
        (ParamName::LogSigmaDiff, Regularizer::Diffusion) => {
            let s = hp.sigma_diff();
            rho.zip_map(eigenvalues, |r, l| r * s * s * l)
        }
        (ParamName::LogNu | ParamName::LogKappa, Regularizer::GraphMatern) => {
            let (nu, kappa) = (hp.nu(), hp.kappa());
            let shift = 2.0 * nu / (kappa * kappa);
            let power = nu / 2.0 + 0.25;
            rho.zip_map(eigenvalues, |r, l| {
                let base = shift + l;
                let dlog = if name == ParamName::LogNu {
                    nu * (0.5 * base.ln() + power / base * shift / nu)
                } else {
                    -2.0 * power * shift / base
                };
                r * dlog
            })
        }
        (ParamName::Beta(j), Regularizer::SoftplusPolynomial { .. }) => eigenvalues.map(|l| {
            let poly = hp.betas.iter().rev().fold(0.0, |acc, b| acc * l + b);
            logistic(poly) * l.powi(j as i32) * inv_var
        }),
        _ => DVector::zeros(rho.len()),
    }
}

/// Median pairwise Euclidean distance between rows of `x`.
pub fn median_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut d: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: f64 = x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(sq.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, &mut upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if d.len() % 2 == 1 {
        upper
    } else {
        let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Starting hyperparameters: unit variances, noise 0.1, median-heuristic
/// lengthscale, flat polynomial, regularizer scalars at 1 (p-step α at 2.5).
pub fn default_hyperparams(spec: &KernelSpec, features: &DMatrix<f64>) -> HyperParams {
    let mut hp = HyperParams::default()
        .with_sigma1_sq(1.0)
        .with_sigma2_sq(1.0)
        .with_noise_sq(0.1)
        .with_alpha(1.0)
        .with_sigma_diff(2f64.sqrt())
        .with_nu(1.5)
        .with_kappa(1.0);
    if spec.base().is_some() {
        let med = median_pairwise_distance(features);
        hp = hp.with_lengthscale(if med > 0.0 { med } else { 1.0 });
    }
    match spec.regularizer() {
        Some(Regularizer::PStepRandomWalk) => hp = hp.with_alpha(2.5),
        Some(Regularizer::SoftplusPolynomial { degree }) => hp.betas = vec![0.0; degree + 1],
        _ => {}
    }
    hp
}

/// Initial parameter vector for a restart. Restart 0 is the deterministic
/// default; later restarts add uniform `±1` noise to every log-space entry,
/// drawn from `seed`.
pub fn default_init(layout: &Arc<ParamLayout>, base: &HyperParams, restart: usize, seed: u64) -> ParamVector {
    let mut pv = ParamVector::pack(layout.clone(), base);
    if restart > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(restart as u64));
        for (v, name) in pv.values.iter_mut().zip(layout.names.iter()) {
            if name.is_log() {
                *v += rng.random_range(-1.0..=1.0);
            }
        }
    }
    pv
}

/// Base Gram data that depends only on the lengthscale.
struct BaseCache {
    log_ell: u64,
    /// unit-variance `G[S,S]`
    gram_tt: DMatrix<f64>,
    /// unit-variance `G` over all nodes (transductive only)
    gram: Option<DMatrix<f64>>,
    /// `Uᵀ G U`
    w: Option<DMatrix<f64>>,
    /// `Uᵀ G[:,S]`
    w_s: Option<DMatrix<f64>>,
}

const CACHE_SLOTS: usize = 4;

/// Intermediates of one training-block evaluation, kept for the gradient.
enum Factors {
    Feature,
    Graph {
        rho: DVector<f64>,
    },
    Transductive {
        rho: DVector<f64>,
        d: DVector<f64>,
        chol: Cholesky,
        z: DMatrix<f64>,
    },
}

/// Everything needed to evaluate the training log marginal likelihood of a
/// kernel spec repeatedly: features, the Laplacian spectrum (computed once),
/// training indices and targets.
pub struct TrainingProblem {
    spec: KernelSpec,
    layout: Arc<ParamLayout>,
    features: DMatrix<f64>,
    spectrum: Option<Arc<SpectralDecomposition>>,
    train_idx: Vec<usize>,
    targets: DMatrix<f64>,
    train_sq_dist: DMatrix<f64>,
    full_sq_dist: Option<DMatrix<f64>>,
    u_train: Option<DMatrix<f64>>,
    cache: Vec<BaseCache>,
}

impl TrainingProblem {
    pub fn new(
        spec: KernelSpec,
        layout: Arc<ParamLayout>,
        features: DMatrix<f64>,
        spectrum: Option<Arc<SpectralDecomposition>>,
        train_idx: Vec<usize>,
        targets: DMatrix<f64>,
    ) -> Result<Self> {
        let n = features.nrows();
        if train_idx.is_empty() {
            return Err(Error::Parameter("empty training set".into()));
        }
        if let Some(&bad) = train_idx.iter().find(|&&i| i >= n) {
            return Err(Error::Parameter(format!("training index {bad} out of range for {n} nodes")));
        }
        if targets.nrows() != train_idx.len() {
            return Err(Error::Parameter(format!(
                "{} targets for {} training nodes",
                targets.nrows(),
                train_idx.len()
            )));
        }
        if spec.regularizer().is_some() {
            match &spectrum {
                Some(sd) if sd.n() == n => {}
                Some(sd) => {
                    return Err(Error::Parameter(format!("spectrum has {} nodes, features {}", sd.n(), n)));
                }
                None => return Err(Error::Parameter("graph kernels need the Laplacian spectrum".into())),
            }
        }
        let x_train = features.select_rows(train_idx.iter());
        let train_sq_dist = cross_sq_distances(&x_train, &x_train);
        let full_sq_dist = (spec.mode() == Mode::Transductive).then(|| cross_sq_distances(&features, &features));
        let u_train = spectrum.as_ref().map(|sd| sd.eigenvectors.select_rows(train_idx.iter()));
        Ok(TrainingProblem {
            spec,
            layout,
            features,
            spectrum,
            train_idx,
            targets,
            train_sq_dist,
            full_sq_dist,
            u_train,
            cache: Vec::new(),
        })
    }

    /// Builds the problem for a dataset's training split; the spectrum is
    /// computed from the dataset graph when the spec needs one.
    pub fn for_dataset(
        spec: KernelSpec,
        layout: Arc<ParamLayout>,
        dataset: &Dataset,
        spectrum: Option<Arc<SpectralDecomposition>>,
        train_idx: &[usize],
    ) -> Result<Self> {
        let spectrum = match (spec.regularizer(), spectrum) {
            (Some(_), None) => Some(Arc::new(dataset.spectrum()?)),
            (_, sd) => sd,
        };
        let targets = dataset.targets(train_idx)?;
        TrainingProblem::new(spec, layout, dataset.features.clone(), spectrum, train_idx.to_vec(), targets)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn spectrum(&self) -> Option<&Arc<SpectralDecomposition>> {
        self.spectrum.as_ref()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn train_idx(&self) -> &[usize] {
        &self.train_idx
    }

    /// Index of the cache entry for `hp`'s lengthscale, computing it on a miss.
    fn cache_slot(&mut self, hp: &HyperParams) -> usize {
        let key = hp.log_lengthscale.to_bits();
        if let Some(pos) = self.cache.iter().position(|c| c.log_ell == key) {
            let entry = self.cache.remove(pos);
            self.cache.push(entry);
            return self.cache.len() - 1;
        }
        let base = self.spec.base().expect("base kernel present");
        let unit = hp.clone().with_sigma1_sq(1.0);
        let gram_tt = base_kernel_from_sq_dist(base, &unit, &self.train_sq_dist);
        let (gram, w, w_s) = match (&self.full_sq_dist, &self.spectrum) {
            (Some(sq), Some(sd)) => {
                let g = base_kernel_from_sq_dist(base, &unit, sq);
                let u = &sd.eigenvectors;
                let w = linalg::congruence(u, &g);
                let w_s = linalg::matmul_tn(u, &g.select_columns(self.train_idx.iter()));
                (Some(g), Some(w), Some(w_s))
            }
            _ => (None, None, None),
        };
        if self.cache.len() == CACHE_SLOTS {
            self.cache.remove(0);
        }
        self.cache.push(BaseCache {
            log_ell: key,
            gram_tt,
            gram,
            w,
            w_s,
        });
        self.cache.len() - 1
    }

    fn factor(&mut self, hp: &HyperParams) -> Result<(DMatrix<f64>, Factors)> {
        hp.validate()?;
        let rho = match (self.spec.regularizer(), &self.spectrum) {
            (Some(reg), Some(sd)) => Some(regularizer_spectrum(reg, hp, &sd.eigenvalues)?),
            _ => None,
        };
        match self.spec.mode() {
            Mode::FeatureOnly => {
                let slot = self.cache_slot(hp);
                Ok((&self.cache[slot].gram_tt * hp.sigma1_sq(), Factors::Feature))
            }
            Mode::GraphOnly => {
                let rho = rho.expect("regularizer spectrum");
                let u_s = self.u_train.as_ref().expect("spectrum present");
                let mut scaled = u_s.clone();
                for (mut col, &r) in scaled.column_iter_mut().zip(rho.iter()) {
                    col /= r.sqrt();
                }
                let mut k = &scaled * scaled.transpose();
                linalg::symmetrize(&mut k);
                Ok((k, Factors::Graph { rho }))
            }
            Mode::Transductive => {
                let rho = rho.expect("regularizer spectrum");
                let s1 = hp.sigma1_sq();
                let slot = self.cache_slot(hp);
                let base = &self.cache[slot];
                let w = base.w.as_ref().expect("transductive cache");
                let w_s = base.w_s.as_ref().expect("transductive cache");
                let d: DVector<f64> = rho.map(f64::sqrt);
                let n = d.len();
                let m = DMatrix::from_fn(n, n, |i, j| {
                    let v = s1 * d[i] * w[(i, j)] * d[j];
                    if i == j {
                        1.0 + v
                    } else {
                        v
                    }
                });
                let chol = Cholesky::new(&m, "transductive training block (I + VᵀK₁V)")?;
                let z = chol.solve_lower(&scale_rows(w_s, &d));
                let mut k = &base.gram_tt * s1 - linalg::matmul_tn(&z, &z) * (s1 * s1);
                linalg::symmetrize(&mut k);
                Ok((k, Factors::Transductive { rho, d, chol, z }))
            }
        }
    }

    /// Kernel block over the training nodes.
    pub fn training_kernel(&mut self, hp: &HyperParams) -> Result<DMatrix<f64>> {
        Ok(self.factor(hp)?.0)
    }

    pub fn lml(&mut self, hp: &HyperParams) -> Result<f64> {
        let k = self.training_kernel(hp)?;
        let v = log_marginal_likelihood(&k, &self.targets, hp.noise_sq())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Invariant(format!("non-finite log marginal likelihood {v}")))
        }
    }

    /// Objective at a raw parameter vector; numerical failures map to `-inf`.
    pub fn evaluate(&mut self, values: &[f64]) -> f64 {
        let hp = unpack_values(&self.layout, values);
        match self.lml(&hp) {
            Ok(v) => v,
            Err(e) => {
                log::trace!("objective rejected parameters: {e}");
                f64::NEG_INFINITY
            }
        }
    }

    /// Log marginal likelihood and its exact gradient with respect to the
    /// packed parameters.
    ///
    /// With `Q = ααᵀ - c (K + σ²I)⁻¹` every partial is `½ tr(Q ∂K[S,S])`.
    /// For the transductive kernel `∂K = T ∂K₁ Tᵀ` with
    /// `T = (I + K₁R₂)⁻¹`, and a change in one regularizer eigenvalue `ρₖ`
    /// moves the block by `-bₖbₖᵀ` where `bₖ = K[S,:]uₖ`.
    pub fn value_and_gradient(&mut self, values: &[f64]) -> Result<(f64, Vec<f64>)> {
        let hp = unpack_values(&self.layout, values);
        let (k, factors) = self.factor(&hp)?;
        let s = k.nrows();
        let c = self.targets.ncols() as f64;
        let noise = hp.noise_sq();
        let mut ky = k.clone();
        for i in 0..s {
            ky[(i, i)] += noise;
        }
        let chol = Cholesky::new(&ky, "training covariance K + noise I")?;
        let alpha = chol.solve(&self.targets);
        let fit: f64 = self.targets.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
        let value = -0.5 * fit - 0.5 * c * chol.log_det() - 0.5 * c * s as f64 * (2.0 * std::f64::consts::PI).ln();
        if !value.is_finite() {
            return Err(Error::Invariant(format!("non-finite log marginal likelihood {value}")));
        }
        let q = &alpha * alpha.transpose() - chol.solve(&DMatrix::identity(s, s)) * c;

        let s1 = hp.sigma1_sq();
        let ell = hp.lengthscale();
        // ½ Σᵢⱼ Hᵢⱼ ∂G/∂log σ₁², ∂G/∂log ℓ for a weight matrix H over `sq`
        let base_kind = self.spec.base();
        let base_partials = |h: &DMatrix<f64>, g: &DMatrix<f64>, sq: &DMatrix<f64>| -> (f64, f64) {
            let base = base_kind.expect("base kernel present");
            let (mut d_s1, mut d_ell) = (0.0, 0.0);
            for ((&hij, &gij), &d2) in h.iter().zip(g.iter()).zip(sq.iter()) {
                let weighted = hij * gij;
                d_s1 += weighted;
                d_ell += weighted
                    * match base {
                        BaseKernel::Rbf => d2 / (ell * ell),
                        BaseKernel::Matern12 => d2.max(0.0).sqrt() / ell,
                    };
            }
            (0.5 * s1 * d_s1, 0.5 * s1 * d_ell)
        };

        let mut base_grad = None;
        let mut rho_grad = None;
        match factors {
            Factors::Feature => {
                let slot = self.cache_slot(&hp);
                base_grad = Some(base_partials(&q, &self.cache[slot].gram_tt, &self.train_sq_dist));
            }
            Factors::Graph { rho } => {
                let u_s = self.u_train.as_ref().expect("spectrum present");
                let qu = &q * u_s;
                let g = DVector::from_fn(rho.len(), |k, _| {
                    let quad = u_s.column(k).dot(&qu.column(k));
                    -0.5 * quad / (rho[k] * rho[k])
                });
                rho_grad = Some((rho, g));
            }
            Factors::Transductive { rho, d, chol: m_chol, z } => {
                let slot = self.cache_slot(&hp);
                let base = &self.cache[slot];
                let w = base.w.as_ref().expect("transductive cache");
                let w_s = base.w_s.as_ref().expect("transductive cache");
                let u = &self.spectrum.as_ref().expect("spectrum present").eigenvectors;
                // X = M⁻¹ D W_S, then D X
                let dx = scale_rows(&m_chol.solve_upper(&z), &d);
                // Uᵀ K[:,S] = σ₁² W_S - σ₁⁴ W D X
                let bt = w_s * s1 - linalg::matmul(w, &dx) * (s1 * s1);
                let btq = &bt * &q;
                let g = DVector::from_fn(rho.len(), |k, _| -0.5 * bt.row(k).dot(&btq.row(k)));
                // T[:,S] = E_S - σ₁² U D X
                let mut t = linalg::matmul(u, &dx) * (-s1);
                for (j, &node) in self.train_idx.iter().enumerate() {
                    t[(node, j)] += 1.0;
                }
                let h = linalg::matmul(&(&t * &q), &t.transpose());
                let g_full = base.gram.as_ref().expect("transductive cache");
                let sq = self.full_sq_dist.as_ref().expect("transductive distances");
                base_grad = Some(base_partials(&h, g_full, sq));
                rho_grad = Some((rho, g));
            }
        }

        let mut grad = vec![0.0; self.layout.len()];
        for (slot, name) in self.layout.names.iter().enumerate() {
            grad[slot] = match name {
                ParamName::LogSigma1Sq => base_grad.map_or(0.0, |b| b.0),
                ParamName::LogLengthscale => base_grad.map_or(0.0, |b| b.1),
                ParamName::LogNoiseSq => 0.5 * q.trace() * noise,
                other => match &rho_grad {
                    Some((rho, g)) => {
                        let reg = self.spec.regularizer().expect("regularizer present");
                        let sd = self.spectrum.as_ref().expect("spectrum present");
                        g.dot(&spectrum_sensitivity(reg, &hp, &sd.eigenvalues, rho, *other))
                    }
                    None => 0.0,
                },
            };
        }
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Invariant(format!("non-finite gradient entry {bad}")));
        }
        Ok((value, grad))
    }

/// Kernel over all nodes at `hp`, through the canonical kernel routines.
    pub fn full_kernel(&self, hp: &HyperParams) -> Result<DMatrix<f64>> {
        match &self.spectrum {
            Some(sd) => kernels::full_kernel(&self.spec, hp, &self.features, sd),
            None => kernels::base_kernel_matrix(&self.spec, hp, &self.features, &self.features),
        }
    }
}

/// Training log marginal likelihood of the kernel built from `pv`;
/// numerical failures give `-inf`.
pub fn objective(pv: &ParamVector, spec: &KernelSpec, dataset: &Dataset, train_idx: &[usize]) -> f64 {
    match TrainingProblem::for_dataset(*spec, pv.layout().clone(), dataset, None, train_idx) {
        Ok(mut problem) => problem.evaluate(&pv.values),
        Err(_) => f64::NEG_INFINITY,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
    /// Coordinates where a neighbouring evaluation was not finite; their
    /// gradient entry is set to zero.
    pub nonfinite: Vec<usize>,
}

impl Gradient {
    pub fn has_warning(&self) -> bool {
        !self.nonfinite.is_empty()
    }
}

/// Central differences `(f(x + h eᵢ) - f(x - h eᵢ)) / 2h`.
pub fn numerical_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Gradient {
    let mut point = x.to_vec();
    let mut values = vec![0.0; x.len()];
    let mut nonfinite = Vec::new();
    for i in 0..x.len() {
        point[i] = x[i] + h;
        let up = f(&point);
        point[i] = x[i] - h;
        let down = f(&point);
        point[i] = x[i];
        if up.is_finite() && down.is_finite() {
            values[i] = (up - down) / (2.0 * h);
        } else {
            nonfinite.push(i);
        }
    }
    Gradient { values, nonfinite }
}

/// How the ascent obtains gradients of a [`TrainingProblem`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Closed form through the cached factorization.
    #[default]
    Exact,
    /// Central differences with step `fd_step`.
    FiniteDifference,
}

/// Adam-style step scaling with accept/reject step-size control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepRule {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Step-size multiplier after a rejected step.
    pub shrink: f64,
    /// Step-size multiplier after an accepted step.
    pub grow: f64,
    pub max_learning_rate: f64,
    /// Stop once the step size falls below this.
    pub min_learning_rate: f64,
    /// Stop once the largest accepted coordinate move falls below this.
    pub step_tol: f64,
    pub fd_step: f64,
    pub gradient: GradientMode,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            shrink: 0.5,
            grow: 1.1,
            max_learning_rate: 0.5,
            min_learning_rate: 1e-6,
            step_tol: 1e-7,
            fd_step: FD_STEP,
            gradient: GradientMode::Exact,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub step_rule: StepRule,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            restarts: 2,
            max_iters: 200,
            seed: 0,
            step_rule: StepRule::default(),
        }
    }
}

/// Result of maximizing a raw objective.
#[derive(Clone, Debug, PartialEq)]
pub struct AscentResult {
    pub best_values: Vec<f64>,
    pub best_value: f64,
    pub best_restart: usize,
    /// `(iteration, objective)` after each iteration, one sequence per restart.
    pub traces: Vec<Vec<(usize, f64)>>,
    pub restarts_run: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptResult {
    pub best_params: ParamVector,
    pub best_lml: f64,
    /// Trace of the winning restart.
    pub trace: Vec<(usize, f64)>,
    pub traces: Vec<Vec<(usize, f64)>>,
    pub restarts_run: usize,
}

/// Something the ascent can maximize.
pub trait Objective {
    /// Objective value; `-inf` marks an infeasible point.
    fn value(&mut self, x: &[f64]) -> f64;
    fn gradient(&mut self, x: &[f64]) -> Gradient;
}

/// A plain function with central-difference gradients.
pub struct FiniteDifference<F> {
    pub f: F,
    pub step: f64,
}

impl<F: FnMut(&[f64]) -> f64> Objective for FiniteDifference<F> {
    fn value(&mut self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn gradient(&mut self, x: &[f64]) -> Gradient {
        numerical_gradient(&mut self.f, x, self.step)
    }
}

impl Objective for TrainingProblem {
    fn value(&mut self, x: &[f64]) -> f64 {
        self.evaluate(x)
    }

    /// Exact gradient, falling back to central differences if the
    /// closed form fails numerically.
    fn gradient(&mut self, x: &[f64]) -> Gradient {
        match self.value_and_gradient(x) {
            Ok((_, values)) => Gradient {
                values,
                nonfinite: Vec::new(),
            },
            Err(e) => {
                log::debug!("closed-form gradient failed ({e}); using finite differences");
                numerical_gradient(|p: &[f64]| self.evaluate(p), x, FD_STEP)
            }
        }
    }
}

fn ascend<O: Objective + ?Sized>(f: &mut O, start: Vec<f64>, rule: &StepRule, max_iters: usize) -> (Vec<f64>, f64, Vec<(usize, f64)>) {
    let mut theta = start;
    let mut value = f.value(&theta);
    let mut trace = Vec::new();
    if !value.is_finite() {
        return (theta, value, trace);
    }
    trace.push((0, value));
    let dim = theta.len();
    let (mut m, mut v) = (vec![0.0; dim], vec![0.0; dim]);
    let mut lr = rule.learning_rate;
    let mut t = 0i32;
    'outer: for iter in 1..=max_iters {
        let grad = f.gradient(&theta);
        t += 1;
        let bc1 = 1.0 - rule.beta1.powi(t);
        let bc2 = 1.0 - rule.beta2.powi(t);
        let mut direction = vec![0.0; dim];
        for i in 0..dim {
            let g = grad.values[i];
            m[i] = rule.beta1 * m[i] + (1.0 - rule.beta1) * g;
            v[i] = rule.beta2 * v[i] + (1.0 - rule.beta2) * g * g;
            direction[i] = (m[i] / bc1) / ((v[i] / bc2).sqrt() + rule.epsilon);
        }
        let mut rejected = false;
        loop {
            let proposal: Vec<f64> = theta.iter().zip(&direction).map(|(x, d)| x + lr * d).collect();
            let candidate = f.value(&proposal);
            if candidate.is_finite() && candidate >= value {
                let moved = direction.iter().map(|d| (lr * d).abs()).fold(0.0, f64::max);
                theta = proposal;
                value = candidate;
                lr = (lr * rule.grow).min(rule.max_learning_rate);
                trace.push((iter, value));
                if moved < rule.step_tol {
                    break 'outer;
                }
                break;
            }
            lr *= rule.shrink;
            if !rejected {
                // Momentum can point past the optimum; retry along the
                // current gradient and restart the moving average.
                rejected = true;
                for i in 0..dim {
                    direction[i] = grad.values[i] / ((v[i] / bc2).sqrt() + rule.epsilon);
                    m[i] = 0.0;
                }
            }
            if lr < rule.min_learning_rate {
                trace.push((iter, value));
                break 'outer;
            }
        }
    }
    (theta, value, trace)
}

/// Maximizes `f` from each starting point using central-difference
/// gradients with step `config.step_rule.fd_step`.
pub fn maximize<F: FnMut(&[f64]) -> f64>(f: F, starts: Vec<Vec<f64>>, config: &OptConfig) -> Result<AscentResult> {
    let mut objective = FiniteDifference {
        f,
        step: config.step_rule.fd_step,
    };
    maximize_objective(&mut objective, starts, config)
}

/// Maximizes `f` from each starting point; the best final value wins, ties
/// to the lowest restart index.
pub fn maximize_objective<O: Objective + ?Sized>(
    f: &mut O,
    starts: Vec<Vec<f64>>,
    config: &OptConfig,
) -> Result<AscentResult> {
    let restarts = starts.len();
    if restarts == 0 {
        return Err(Error::Parameter("at least one restart is required".into()));
    }
    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    let mut traces = Vec::with_capacity(restarts);
    for (r, start) in starts.into_iter().enumerate() {
        let (theta, value, trace) = ascend(f, start, &config.step_rule, config.max_iters);
        traces.push(trace);
        if value.is_finite() && best.as_ref().is_none_or(|b| value > b.1) {
            best = Some((theta, value, r));
        }
    }
    match best {
        Some((best_values, best_value, best_restart)) => Ok(AscentResult {
            best_values,
            best_value,
            best_restart,
            traces,
            restarts_run: restarts,
        }),
        None => Err(Error::OptimizationFailed { restarts, traces }),
    }
}

/// Fits the hyperparameters of `problem` starting from `base` (restart 0)
/// and `config.restarts - 1` perturbed copies.
pub fn optimize_problem(problem: &mut TrainingProblem, base: &HyperParams, config: &OptConfig) -> Result<OptResult> {
    if config.restarts == 0 {
        return Err(Error::Parameter("restarts must be at least 1".into()));
    }
    let layout = problem.layout().clone();
    let starts = (0..config.restarts)
        .map(|r| default_init(&layout, base, r, config.seed).values)
        .collect();
    let outcome = match config.step_rule.gradient {
        GradientMode::Exact => maximize_objective(problem, starts, config)?,
        GradientMode::FiniteDifference => maximize(|x: &[f64]| problem.evaluate(x), starts, config)?,
    };
    let trace = outcome.traces[outcome.best_restart].clone();
    Ok(OptResult {
        best_params: ParamVector::from_values(layout, outcome.best_values)?,
        best_lml: outcome.best_value,
        trace,
        traces: outcome.traces,
        restarts_run: outcome.restarts_run,
    })
}

/// Fits kernel hyperparameters on a dataset's training nodes.
pub fn optimize(spec: &KernelSpec, dataset: &Dataset, train_idx: &[usize], config: &OptConfig) -> Result<OptResult> {
    let base = default_hyperparams(spec, &dataset.features);
    let layout = Arc::new(ParamLayout::new(spec, base.clone()));
    let mut problem = TrainingProblem::for_dataset(*spec, layout, dataset, None, train_idx)?;
    optimize_problem(&mut problem, &base, config)
}
