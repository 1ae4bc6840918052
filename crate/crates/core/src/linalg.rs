//! Dense factorizations backing the kernel and GP code.
//!
//! Matrices are `nalgebra::DMatrix<f64>` everywhere in the public API; the
//! cubic-cost kernels (symmetric eigensolve, Cholesky, LU, matmul) run on
//! faer through zero-copy column-major views.

use faer::linalg::matmul::triangular::BlockStructure;
use faer::linalg::solvers::{Llt, PartialPivLu, Solve};
use faer::{Accum, MatMut, MatRef, Par, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagonal jitter tried in order when a factorization fails.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

pub(crate) fn view(m: &DMatrix<f64>) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(m.as_slice(), m.nrows(), m.ncols())
}

fn view_mut(m: &mut DMatrix<f64>) -> MatMut<'_, f64> {
    let (r, c) = m.shape();
    MatMut::from_column_major_slice_mut(m.as_mut_slice(), r, c)
}

/// Clears the upper halves of the vector registers.
///
/// faer's wide-vector kernels can return with that state dirty, and any
/// legacy-SSE code that runs next (libm's `exp`, notably) then stalls on
/// every instruction. Every wrapper here calls this before returning.
#[inline]
fn settle() {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: AVX support was checked just above.
        unsafe { zero_upper() }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
#[allow(unused_unsafe)]
unsafe fn zero_upper() {
    unsafe { std::arch::x86_64::_mm256_zeroupper() }
}

fn copy_out(m: MatRef<'_, f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    view_mut(&mut out).copy_from(m);
    out
}

/// `a * b`.
pub fn matmul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul dimension mismatch");
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    faer::linalg::matmul::matmul(view_mut(&mut out), Accum::Replace, view(a), view(b), 1.0, Par::Seq);
    settle();
    out
}

/// `aᵀ * b`.
pub fn matmul_tn(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "matmul dimension mismatch");
    let mut out = DMatrix::zeros(a.ncols(), b.ncols());
    faer::linalg::matmul::matmul(
        view_mut(&mut out),
        Accum::Replace,
        view(a).transpose(),
        view(b),
        1.0,
        Par::Seq,
    );
    settle();
    out
}

/// `Uᵀ G U` for symmetric `g`; only the lower triangle of the outer product
/// is computed, then mirrored.
pub fn congruence(u: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let gu = matmul(g, u);
    let n = u.ncols();
    let mut out = DMatrix::zeros(n, n);
    faer::linalg::matmul::triangular::matmul(
        view_mut(&mut out),
        BlockStructure::TriangularLower,
        Accum::Replace,
        view(u).transpose(),
        BlockStructure::Rectangular,
        view(&gu),
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    settle();
    for j in 0..n {
        for i in 0..j {
            out[(i, j)] = out[(j, i)];
        }
    }
    out
}

/// `U diag(d) Uᵀ`, symmetrized.
pub fn spectral_compose(u: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = u.clone();
    for (mut col, &w) in scaled.column_iter_mut().zip(d.iter()) {
        col *= w;
    }
    let mut out = DMatrix::zeros(u.nrows(), u.nrows());
    faer::linalg::matmul::matmul(
        view_mut(&mut out),
        Accum::Replace,
        view(&scaled),
        view(u).transpose(),
        1.0,
        Par::Seq,
    );
    settle();
    symmetrize(&mut out);
    out
}

/// Replace `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Largest absolute asymmetry `max |m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetric eigendecomposition, eigenvalues ascending.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let evd = view(m)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::NoConvergence);
    settle();
    let evd = evd?;
    let s = evd.S();
    let values = DVector::from_iterator(m.nrows(), (0..m.nrows()).map(|i| s[i]));
    Ok((values, copy_out(evd.U())))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    let vals = view(m)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::NoConvergence);
    settle();
    let vals = vals?;
    Ok(vals.into_iter().fold(f64::INFINITY, f64::min))
}

/// Cholesky factor `A = L Lᵀ` of a symmetric positive-definite matrix.
pub struct Cholesky {
    llt: Llt<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factorizes `a` (lower triangle read), escalating diagonal jitter
    /// along [`JITTER_LADDER`] until the factorization succeeds.
    pub fn new(a: &DMatrix<f64>, context: &str) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::Parameter(format!("{context}: matrix is not square")));
        }
        for &jitter in JITTER_LADDER.iter() {
            let attempt = if jitter == 0.0 {
                view(a).llt(Side::Lower)
            } else {
                let mut shifted = a.clone();
                for i in 0..n {
                    shifted[(i, i)] += jitter;
                }
                view(&shifted).llt(Side::Lower)
            };
            settle();
            if let Ok(llt) = attempt {
                let l = llt.L();
                if (0..n).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0) {
                    if jitter > 0.0 {
                        log::debug!("{context}: cholesky needed jitter {jitter:e}");
                    }
                    return Ok(Cholesky { llt, jitter });
                }
            }
        }
        Err(Error::Conditioning {
            context: format!("{context}: cholesky failed after jitter {:e}", JITTER_LADDER[3]),
            condition: diag_condition_estimate(a),
        })
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    /// Diagonal jitter that was needed to factorize.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.llt.solve_in_place(view_mut(&mut out));
        settle();
        out
    }

    /// `L⁻ᵀ b`.
    pub fn solve_upper(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        faer::linalg::triangular_solve::solve_upper_triangular_in_place(
            self.llt.L().transpose(),
            view_mut(&mut out),
            Par::Seq,
        );
        settle();
        out
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            self.llt.L(),
            view_mut(&mut out),
            Par::Seq,
        );
        settle();
        out
    }
}

/// Solves the general square system `a x = b` by partially pivoted LU,
/// retrying with diagonal jitter along [`JITTER_LADDER`] when the factor is
/// numerically singular.
pub fn lu_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() || b.nrows() != n {
        return Err(Error::Parameter(format!("{context}: dimension mismatch")));
    }
    let mut last_condition = f64::INFINITY;
    for &jitter in JITTER_LADDER.iter() {
        let shifted;
        let mat = if jitter == 0.0 {
            a
        } else {
            let mut s = a.clone();
            for i in 0..n {
                s[(i, i)] += jitter;
            }
            shifted = s;
            &shifted
        };
        let lu = PartialPivLu::new(view(mat));
        settle();
        let condition = pivot_condition_estimate(lu.U());
        last_condition = condition;
        if !condition.is_finite() || condition > 1.0 / f64::EPSILON {
            continue;
        }
        let mut out = b.clone();
        lu.solve_in_place(view_mut(&mut out));
        settle();
        if out.iter().all(|v| v.is_finite()) {
            if jitter > 0.0 {
                log::debug!("{context}: LU solve needed jitter {jitter:e}");
            }
            return Ok(out);
        }
    }
    Err(Error::Conditioning {
        context: format!("{context}: LU solve failed after jitter {:e}", JITTER_LADDER[3]),
        condition: last_condition,
    })
}

/// Dense inverse through LU, used by test oracles and tiny systems.
pub fn inverse(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    lu_solve(a, &DMatrix::identity(a.nrows(), a.nrows()), context)
}

/// Ratio of largest to smallest |U_ii|: a cheap lower bound on cond(A).
fn pivot_condition_estimate(u: MatRef<'_, f64>) -> f64 {
    let n = u.nrows().min(u.ncols());
    if n == 0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = u[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo == 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn diag_condition_estimate(a: &DMatrix<f64>) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..a.nrows() {
        let d = a[(i, i)];
        lo = lo.min(d);
        hi = hi.max(d.abs());
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd(n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        &a * a.transpose() + DMatrix::identity(n, n) * n as f64
    }

    #[test]
    fn matmul_matches_nalgebra() {
        let a = DMatrix::from_fn(4, 3, |i, j| (i + 2 * j) as f64);
        let b = DMatrix::from_fn(3, 5, |i, j| (i as f64) - (j as f64));
        assert_relative_eq!(matmul(&a, &b), &a * &b, epsilon = 1e-12);
        let c = DMatrix::from_fn(4, 2, |i, j| (i * j) as f64 + 0.5);
        assert_relative_eq!(matmul_tn(&a, &c), a.transpose() * &c, epsilon = 1e-12);
    }

    #[test]
    fn congruence_matches_dense_product() {
        let u = DMatrix::from_fn(7, 5, |i, j| ((i * 3 + j) % 4) as f64 - 1.5);
        let g = spd(7);
        let w = congruence(&u, &g);
        assert_relative_eq!(w, u.transpose() * &g * &u, epsilon = 1e-10);
        assert_eq!(w, w.transpose());
    }

    #[test]
    fn cholesky_solves_and_log_det() {
        let a = spd(6);
        let chol = Cholesky::new(&a, "test").unwrap();
        let b = DMatrix::from_fn(6, 2, |i, j| (i + j) as f64);
        assert_relative_eq!(&a * chol.solve(&b), b, epsilon = 1e-10);
        let det = a.clone().determinant();
        assert_relative_eq!(chol.log_det(), det.ln(), epsilon = 1e-10);
        assert_eq!(chol.jitter(), 0.0);
    }

    #[test]
    fn cholesky_uses_jitter_on_singular_psd() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let chol = Cholesky::new(&a, "rank one").unwrap();
        assert!(chol.jitter() > 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(Cholesky::new(&a, "indef"), Err(Error::Conditioning { .. })));
    }

    #[test]
    fn eigen_reconstructs() {
        let a = spd(5);
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        assert!(vals.as_slice().windows(2).all(|w| w[0] <= w[1]));
        let rebuilt = spectral_compose(&vecs, &vals);
        assert_relative_eq!(rebuilt, a, epsilon = 1e-9);
    }

    #[test]
    fn lu_solve_general() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[4.0, 3.0]);
        let x = lu_solve(&a, &b, "t").unwrap();
        assert_relative_eq!(x, DMatrix::from_row_slice(2, 1, &[1.0, 2.0]), epsilon = 1e-12);
    }
}
