//! Dense complex linear algebra used throughout the crate.
//!
//! Thin wrappers over `nalgebra` that fix the conventions the design code
//! relies on: eigenvalues and singular values in decreasing order, Hermitian
//! square roots with round-off eigenvalues clamped at zero, and full (square)
//! singular bases when a matrix is rectangular.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen, SVD};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> CMatrix {
    CMatrix::from_row_iterator(rows, cols, data.iter().map(|&x| c64(x, 0.0)))
}

pub fn diag_real(values: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(
        values.len(),
        values.iter().map(|&x| c64(x, 0.0)),
    ))
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace_re(a: &CMatrix) -> f64 {
    a.trace().re
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * c64(0.5, 0.0)
}

/// Eigendecomposition of the Hermitian part of `a`, eigenvalues decreasing.
pub fn eigh_desc(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        canonical_phase(&mut vectors, dst);
    }
    (values, vectors)
}

/// Unit-modulus factor that makes the first significant entry of `col`
/// real and positive.
fn phase_of(col: impl Iterator<Item = C64>) -> C64 {
    col.into_iter()
        .find(|z| z.norm() > PHASE_PIVOT)
        .map(|z| (z / z.norm()).conj())
        .unwrap_or(c64(1.0, 0.0))
}

// Entries below this are skipped when choosing the phase reference, so that
// tiny perturbations of the input do not flip the choice.
const PHASE_PIVOT: f64 = 1e-6;

/// Rotates column `j` of `m` to the canonical phase. Decompositions are
/// otherwise unique only up to a unit-modulus factor per column, and a fixed
/// convention keeps designs continuous in their inputs.
fn canonical_phase(m: &mut CMatrix, j: usize) {
    let phase = phase_of(m.column(j).iter().copied());
    let mut col = m.column_mut(j);
    col *= phase;
}

/// Eigenvalues of a Hermitian matrix in decreasing order.
pub fn eigvals_desc(a: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(hermitian_part(a))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn spectral_map(a: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (values, u) = eigh_desc(a);
    let mapped: Vec<f64> = values.into_iter().map(f).collect();
    &u * diag_real(&mapped) * u.adjoint()
}

/// Hermitian square root of a positive semidefinite matrix. Negative
/// round-off eigenvalues are set to zero.
pub fn psd_sqrt(a: &CMatrix) -> CMatrix {
    spectral_map(a, |x| x.max(0.0).sqrt())
}

/// Hermitian inverse square root of a positive definite matrix.
pub fn pd_inv_sqrt(a: &CMatrix, context: &str) -> Result<CMatrix> {
    let values = eigvals_desc(a);
    let largest = values.first().copied().unwrap_or(0.0).abs();
    let smallest = values.last().copied().unwrap_or(0.0);
    if !(smallest > 1e-300 && smallest > 1e-15 * largest) {
        return Err(Error::Singular(context.to_string()));
    }
    Ok(spectral_map(a, |x| 1.0 / x.sqrt()))
}

/// Inverse of a Hermitian positive definite matrix via Cholesky.
pub fn pd_inverse(a: &CMatrix, context: &str) -> Result<CMatrix> {
    let n = a.nrows();
    let chol = hermitian_part(a)
        .cholesky()
        .ok_or_else(|| Error::Singular(context.to_string()))?;
    Ok(chol.solve(&identity(n)))
}

/// Lower Cholesky factor of the Hermitian part of `a`.
pub fn cholesky_lower(a: &CMatrix, context: &str) -> Result<CMatrix> {
    hermitian_part(a)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Singular(context.to_string()))
}

/// Thin SVD `a = U diag(s) V^H`, singular values decreasing.
pub struct Svd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

pub fn svd_thin(a: &CMatrix) -> Svd {
    let svd = SVD::new(a.clone(), true, true);
    let mut u = svd.u.expect("left singular vectors requested");
    let mut v = svd.v_t.expect("right singular vectors requested").adjoint();
    for j in 0..v.ncols() {
        let phase = phase_of(v.column(j).iter().copied());
        let mut vc = v.column_mut(j);
        vc *= phase;
        let mut uc = u.column_mut(j);
        uc *= phase;
    }
    Svd {
        u,
        s: svd.singular_values.iter().copied().collect(),
        v,
    }
}

/// SVD with square unitary `U` (m x m) and `V` (n x n); `s` has min(m, n)
/// entries in decreasing order.
pub fn svd_full(a: &CMatrix) -> Svd {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Svd {
            u: identity(m),
            s: Vec::new(),
            v: identity(n),
        };
    }
    let thin = svd_thin(a);
    Svd {
        u: complete_basis(&thin.u),
        s: thin.s,
        v: complete_basis(&thin.v),
    }
}

/// Extends orthonormal columns to a square unitary matrix.
pub fn complete_basis(q: &CMatrix) -> CMatrix {
    let (m, r) = q.shape();
    if r >= m {
        return q.columns(0, m).into_owned();
    }
    let comp = orth_complement(q);
    let mut out = CMatrix::zeros(m, m);
    out.columns_mut(0, r).copy_from(q);
    out.columns_mut(r, m - r).copy_from(&comp);
    out
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// (orthonormal) columns of `q`.
pub fn orth_complement(q: &CMatrix) -> CMatrix {
    let (m, r) = q.shape();
    // Householder QR of [q | I]: the leading r columns of the unitary factor
    // span q, the remaining m - r span the complement.
    let mut stacked = CMatrix::zeros(m, r + m);
    stacked.columns_mut(0, r).copy_from(q);
    stacked.columns_mut(r, m).copy_from(&identity(m));
    let mut full = stacked.qr().q();
    for j in r..m {
        canonical_phase(&mut full, j);
    }
    full.columns(r, m - r).into_owned()
}

/// Standard circularly-symmetric complex Gaussian: real and imaginary parts
/// each N(0, 1/2).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    // column-major fill order is part of the reproducibility contract
    CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

/// Haar-distributed unitary matrix.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let g = complex_gaussian_matrix(n, n, rng);
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            c64(1.0, 0.0)
        };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

/// Returns `Some(c)` when `a` equals `c * I` within `rel_tol` (relative to
/// the largest entry magnitude). The zero matrix yields `Some(0.0)`.
pub fn scalar_multiple_of_identity(a: &CMatrix, rel_tol: f64) -> Option<f64> {
    let n = a.nrows();
    if n != a.ncols() {
        return None;
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Some(0.0);
    }
    let mean = (0..n).map(|i| a[(i, i)].re).sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j {
                c64(mean, 0.0)
            } else {
                c64(0.0, 0.0)
            };
            if (a[(i, j)] - target).norm() > rel_tol * scale {
                return None;
            }
        }
    }
    Some(mean)
}

pub fn is_unitary(q: &CMatrix, tol: f64) -> bool {
    q.is_square() && frobenius(&(q.adjoint() * q - identity(q.nrows()))) <= tol
}
