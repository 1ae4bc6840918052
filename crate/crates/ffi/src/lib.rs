//! C ABI over the `transgp` library.
//!
//! Conventions:
//!
//! - Fallible functions return a [`TgStatus`]; `TG_STATUS_OK` is zero. On
//!   failure [`tg_last_error`] describes the problem for the calling thread.
//! - Objects are opaque handles created by `*_new`/`*_load` style functions
//!   and released with the matching `*_free`. Freeing null is a no-op.
//! - Matrices cross the boundary as row-major `double` buffers owned by the
//!   caller; output buffers must be preallocated with the documented length.
//! - Strings returned by the library are released with [`tg_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nalgebra::DMatrix;
use transgp::data::{self, Dataset};
use transgp::experiment::{run_experiment_in_memory, ExperimentConfig};
use transgp::gp;
use transgp::graph::{self, Graph, SpectralDecomposition};
use transgp::kernels::{self, BaseKernel, HyperParams, KernelSpec, Mode, Regularizer};
use transgp::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TgStatus {
    Ok = 0,
    /// Bad dimensions, indices or parameter values, or an asymmetric or
    /// edgeless graph where one is not allowed.
    InvalidArgument = 1,
    NullPointer = 2,
    /// Conditioning failure, singular regularizer or violated invariant.
    Numerical = 3,
    /// Missing or malformed dataset files, disconnected generated graph.
    Data = 4,
    /// Invalid experiment config.
    Config = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TgBaseKernel {
    None = 0,
    Rbf = 1,
    Matern12 = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TgRegularizer {
    None = 0,
    RegularizedLaplacian = 1,
    Diffusion = 2,
    PStepRandomWalk = 3,
    Cosine = 4,
    GraphMatern = 5,
    SoftplusPolynomial = 6,
}

/// Kernel description; the combination mode follows from which parts are
/// present.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TgKernelSpec {
    pub base: TgBaseKernel,
    pub regularizer: TgRegularizer,
    /// Polynomial degree for `TG_REGULARIZER_SOFTPLUS_POLYNOMIAL`.
    pub degree: usize,
}

/// Hyperparameters in natural (not log) units.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TgHyperParams {
    pub sigma1_sq: f64,
    pub lengthscale: f64,
    pub sigma2_sq: f64,
    pub noise_sq: f64,
    pub alpha: f64,
    pub sigma_diff: f64,
    pub p_steps: u32,
    pub nu: f64,
    pub kappa: f64,
    /// `beta_count` polynomial coefficients, lowest order first; may be null
    /// when `beta_count` is zero.
    pub betas: *const f64,
    pub beta_count: usize,
}

/// Opaque graph handle.
pub struct TgGraph(Graph);

/// Opaque Laplacian spectrum handle.
pub struct TgSpectrum(SpectralDecomposition);

/// Opaque dataset handle.
pub struct TgDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> TgStatus {
    match err {
        Error::Config(_) => TgStatus::Config,
        Error::Parameter(_) | Error::Symmetry { .. } | Error::EdgelessGraph => TgStatus::InvalidArgument,
        e if e.is_numerical() => TgStatus::Numerical,
        _ => TgStatus::Data,
    }
}

struct Fail(TgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TgStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(TgStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> TgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TgStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside transgp");
            TgStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn row_major(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>, Fail> {
    let len = rows.checked_mul(cols).ok_or_else(|| invalid(format!("{what} size overflows")))?;
    Ok(DMatrix::from_row_slice(rows, cols, slice_in(p, len, what)?))
}

fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    out.copy_from_slice(m.transpose().as_slice());
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, empty after a success.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn tg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by the library.
#[no_mangle]
pub unsafe extern "C" fn tg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Graph from a row-major `n x n` symmetric nonnegative adjacency matrix.
#[no_mangle]
pub unsafe extern "C" fn tg_graph_from_adjacency(adjacency: *const f64, n: usize, out: *mut *mut TgGraph) -> TgStatus {
    guard(|| {
        let a = row_major(adjacency, n, n, "adjacency")?;
        put(out, TgGraph(Graph::from_adjacency(a)?))
    })
}

/// Unweighted union-symmetrized `k`-nearest-neighbour graph over the rows of
/// a row-major `n x m` feature matrix.
#[no_mangle]
pub unsafe extern "C" fn tg_graph_knn(features: *const f64, n: usize, m: usize, k: usize, out: *mut *mut TgGraph) -> TgStatus {
    guard(|| {
        let x = row_major(features, n, m, "features")?;
        put(out, TgGraph(graph::build_knn_graph(&x, k)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn tg_graph_node_count(g: *const TgGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.n())
}

#[no_mangle]
pub unsafe extern "C" fn tg_graph_edge_count(g: *const TgGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.edge_count())
}

/// Copies the row-major adjacency matrix into `out` (`n * n` doubles).
#[no_mangle]
pub unsafe extern "C" fn tg_graph_adjacency(g: *const TgGraph, out: *mut f64, len: usize) -> TgStatus {
    guard(|| {
        let g = &handle(g, "graph")?.0;
        if len != g.n() * g.n() {
            return Err(invalid(format!("adjacency buffer holds {len} values, need {}", g.n() * g.n())));
        }
        write_row_major(g.adjacency(), slice_out(out, len, "output buffer")?);
        Ok(())
    })
}

/// Fraction of edges whose endpoints share a label.
#[no_mangle]
pub unsafe extern "C" fn tg_graph_homophily(g: *const TgGraph, labels: *const usize, n: usize, out: *mut f64) -> TgStatus {
    guard(|| {
        let g = &handle(g, "graph")?.0;
        let labels = slice_in(labels, n, "labels")?;
        let h = graph::homophily_ratio(g, labels)?;
        *out.as_mut().ok_or_else(|| null("output"))? = h;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tg_graph_free(g: *mut TgGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Eigendecomposition of the graph's normalized Laplacian.
#[no_mangle]
pub unsafe extern "C" fn tg_spectrum_new(g: *const TgGraph, out: *mut *mut TgSpectrum) -> TgStatus {
    guard(|| {
        let g = &handle(g, "graph")?.0;
        let sd = graph::spectral_decompose(&graph::normalized_laplacian(g))?;
        put(out, TgSpectrum(sd))
    })
}

/// Copies the ascending eigenvalues into `out` (`len` must equal the node
/// count).
#[no_mangle]
pub unsafe extern "C" fn tg_spectrum_eigenvalues(s: *const TgSpectrum, out: *mut f64, len: usize) -> TgStatus {
    guard(|| {
        let s = &handle(s, "spectrum")?.0;
        if len != s.n() {
            return Err(invalid(format!("eigenvalue buffer holds {len} values, need {}", s.n())));
        }
        slice_out(out, len, "output buffer")?.copy_from_slice(s.eigenvalues.as_slice());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tg_spectrum_free(s: *mut TgSpectrum) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

fn to_spec(spec: &TgKernelSpec) -> Result<KernelSpec, Fail> {
    let base = match spec.base {
        TgBaseKernel::None => None,
        TgBaseKernel::Rbf => Some(BaseKernel::Rbf),
        TgBaseKernel::Matern12 => Some(BaseKernel::Matern12),
    };
    let regularizer = match spec.regularizer {
        TgRegularizer::None => None,
        TgRegularizer::RegularizedLaplacian => Some(Regularizer::RegularizedLaplacian),
        TgRegularizer::Diffusion => Some(Regularizer::Diffusion),
        TgRegularizer::PStepRandomWalk => Some(Regularizer::PStepRandomWalk),
        TgRegularizer::Cosine => Some(Regularizer::Cosine),
        TgRegularizer::GraphMatern => Some(Regularizer::GraphMatern),
        TgRegularizer::SoftplusPolynomial => Some(Regularizer::SoftplusPolynomial { degree: spec.degree }),
    };
    let mode = match (base, regularizer) {
        (Some(_), Some(_)) => Mode::Transductive,
        (Some(_), None) => Mode::FeatureOnly,
        (None, Some(_)) => Mode::GraphOnly,
        (None, None) => return Err(invalid("kernel spec needs a base kernel or a regularizer")),
    };
    Ok(KernelSpec::new(base, regularizer, mode)?)
}

unsafe fn to_hyperparams(hp: &TgHyperParams) -> Result<HyperParams, Fail> {
    let betas = slice_in(hp.betas, hp.beta_count, "betas")?.to_vec();
    let out = HyperParams::default()
        .with_sigma1_sq(hp.sigma1_sq)
        .with_lengthscale(hp.lengthscale)
        .with_sigma2_sq(hp.sigma2_sq)
        .with_noise_sq(hp.noise_sq)
        .with_alpha(hp.alpha)
        .with_sigma_diff(hp.sigma_diff)
        .with_p_steps(hp.p_steps)
        .with_nu(hp.nu)
        .with_kappa(hp.kappa)
        .with_betas(betas);
    out.validate()?;
    Ok(out)
}

/// Full `n x n` kernel over all nodes, written row-major into `out`.
///
/// `features` is row-major `n x m` and may be null for graph-only specs;
/// `spectrum` may be null for feature-only specs.
#[no_mangle]
pub unsafe extern "C" fn tg_kernel_matrix(
    spec: *const TgKernelSpec,
    hp: *const TgHyperParams,
    features: *const f64,
    n: usize,
    m: usize,
    spectrum: *const TgSpectrum,
    out: *mut f64,
) -> TgStatus {
    guard(|| {
        let spec = to_spec(handle(spec, "spec")?)?;
        let hp = to_hyperparams(handle(hp, "hyperparameters")?)?;
        let k = match spec.mode() {
            Mode::FeatureOnly => {
                let x = row_major(features, n, m, "features")?;
                kernels::base_kernel_matrix(&spec, &hp, &x, &x)?
            }
            Mode::GraphOnly => {
                let sd = &handle(spectrum, "spectrum")?.0;
                if sd.n() != n {
                    return Err(invalid(format!("spectrum has {} nodes, expected {n}", sd.n())));
                }
                kernels::graph_only_kernel(&spec, &hp, sd)?
            }
            Mode::Transductive => {
                let x = row_major(features, n, m, "features")?;
                kernels::full_kernel(&spec, &hp, &x, &handle(spectrum, "spectrum")?.0)?
            }
        };
        write_row_major(&k, slice_out(out, n * n, "output buffer")?);
        Ok(())
    })
}

/// GP posterior at `test` given row-major `n_train x c` targets at `train`.
/// Writes `n_test x c` means, `n_test` variances and the log marginal
/// likelihood.
#[no_mangle]
pub unsafe extern "C" fn tg_gp_posterior(
    kernel: *const f64,
    n: usize,
    train: *const usize,
    n_train: usize,
    test: *const usize,
    n_test: usize,
    targets: *const f64,
    c: usize,
    noise_sq: f64,
    mean_out: *mut f64,
    var_out: *mut f64,
    lml_out: *mut f64,
) -> TgStatus {
    guard(|| {
        let k = row_major(kernel, n, n, "kernel")?;
        let train = slice_in(train, n_train, "train indices")?;
        let test = slice_in(test, n_test, "test indices")?;
        let y = row_major(targets, n_train, c, "targets")?;
        let post = gp::posterior(&k, train, test, &y, noise_sq)?;
        write_row_major(&post.mean, slice_out(mean_out, n_test * c, "mean buffer")?);
        slice_out(var_out, n_test, "variance buffer")?.copy_from_slice(post.variance.as_slice());
        if let Some(l) = lml_out.as_mut() {
            *l = post.lml;
        }
        Ok(())
    })
}

/// Reads a dataset directory.
#[no_mangle]
pub unsafe extern "C" fn tg_dataset_load(dir: *const c_char, out: *mut *mut TgDataset) -> TgStatus {
    guard(|| {
        let dir = path_arg(dir)?;
        put(out, TgDataset(data::load_dataset(dir)?))
    })
}

/// Samples a connected Swiss-roll dataset.
#[no_mangle]
pub unsafe extern "C" fn tg_dataset_swiss_roll(n: usize, k: usize, noise: f64, seed: u64, out: *mut *mut TgDataset) -> TgStatus {
    guard(|| put(out, TgDataset(data::generate_swiss_roll(n, k, noise, seed)?)))
}

#[no_mangle]
pub unsafe extern "C" fn tg_dataset_node_count(ds: *const TgDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

#[no_mangle]
pub unsafe extern "C" fn tg_dataset_feature_count(ds: *const TgDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.features.ncols())
}

/// Copies the dataset's graph into a new handle.
#[no_mangle]
pub unsafe extern "C" fn tg_dataset_graph(ds: *const TgDataset, out: *mut *mut TgGraph) -> TgStatus {
    guard(|| put(out, TgGraph(handle(ds, "dataset")?.0.graph.clone())))
}

/// Copies the row-major `n x m` feature matrix into `out`.
#[no_mangle]
pub unsafe extern "C" fn tg_dataset_features(ds: *const TgDataset, out: *mut f64, len: usize) -> TgStatus {
    guard(|| {
        let x = &handle(ds, "dataset")?.0.features;
        if len != x.len() {
            return Err(invalid(format!("feature buffer holds {len} values, need {}", x.len())));
        }
        write_row_major(x, slice_out(out, len, "output buffer")?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tg_dataset_free(ds: *mut TgDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Runs the experiment described by a TOML config file and returns its
/// report as JSON in `*json_out` (free with [`tg_string_free`]). No files
/// are written.
#[no_mangle]
pub unsafe extern "C" fn tg_run_experiment(config_path: *const c_char, json_out: *mut *mut c_char) -> TgStatus {
    guard(|| {
        if json_out.is_null() {
            return Err(null("json output"));
        }
        *json_out = ptr::null_mut();
        let cfg = ExperimentConfig::from_file(path_arg(config_path)?)?;
        let report = run_experiment_in_memory(&cfg)?.report;
        let json = serde_json::to_string(&report).map_err(|e| Fail(TgStatus::Data, e.to_string()))?;
        *json_out = CString::new(json).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}
