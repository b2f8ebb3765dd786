//! The source rotation `Q_0` and the THP feedback it induces.
//!
//! With `Φ' = σ_b² (I - Q_0^H Θ Q_0) = L L^H` the per-stream MSEs after
//! feedback are `L_{n,n}²`. The M-Schur-convex branch chooses `Q_0` so that
//! all `L_{n,n}` are equal; the concave branch diagonalizes `Θ`, which makes
//! `L` diagonal and the feedback trivial.

use crate::error::{Error, Result};
use crate::linalg::{
    c64, cholesky_lower, diag_real, eigh_desc, eigvals_desc, identity, orth_complement, CMatrix,
    CVector,
};
use crate::thp::PrecoderFeedback;

/// Eigenvalues of `Θ` closer than this are treated as equal.
pub const EQUAL_EIGENVALUE_TOLERANCE: f64 = 1e-12;

fn check_theta(theta: &CMatrix) -> Result<Vec<f64>> {
    if !theta.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "Theta is {}x{}",
            theta.nrows(),
            theta.ncols()
        )));
    }
    let lambda = eigvals_desc(theta);
    if let Some(&max) = lambda.first() {
        if max >= 1.0 {
            return Err(Error::EigenvalueOutOfRange(max));
        }
    }
    Ok(lambda)
}

/// `sqrt(max(num, 0) / den)`.
fn ratio_sqrt(num: f64, den: f64) -> f64 {
    (num.max(0.0) / den).sqrt()
}

/// Coefficients on the largest and smallest eigen-direction that give the
/// quadratic form the value `target`.
fn mixing(first: f64, last: f64, target: f64) -> (f64, f64) {
    let spread = first - last;
    if spread <= EQUAL_EIGENVALUE_TOLERANCE * first.abs().max(1.0) {
        return (1.0, 0.0);
    }
    (
        ratio_sqrt(target - last, spread),
        ratio_sqrt(first - target, spread),
    )
}

/// Rotation that equalizes the diagonal of the Cholesky factor of
/// `σ_b² (I - Q_0^H Θ Q_0)`.
pub fn construct_q0_convex(theta: &CMatrix, sigma_b: f64) -> Result<CMatrix> {
    let lambda = check_theta(theta)?;
    let n = theta.nrows();
    if n <= 1 || lambda[0] - lambda[n - 1] <= EQUAL_EIGENVALUE_TOLERANCE {
        return Ok(identity(n));
    }
    // Step 1: σ_b² (I - Θ) = U_M Λ_M U_M^H with Λ_M decreasing, A = U_M Λ_M^{1/2}
    let sigma_b_sq = sigma_b * sigma_b;
    let target_matrix = (identity(n) - theta) * c64(sigma_b_sq, 0.0);
    let (lambda_m, u_m) = eigh_desc(&target_matrix);
    let lambda_m: Vec<f64> = lambda_m.into_iter().map(|x| x.max(0.0)).collect();
    let a = &u_m * diag_real(&lambda_m.iter().map(|x| x.sqrt()).collect::<Vec<_>>());
    let geo = (lambda_m.iter().map(|x| x.ln()).sum::<f64>() / n as f64).exp();

    // Steps 2-4: build S column by column. At each stage the next column is
    // a mix of the extreme eigen-directions of the residual quadratic form
    // on the orthogonal complement of the columns chosen so far.
    let mut s = CMatrix::zeros(n, n);
    for k in 0..n - 1 {
        let perp = if k == 0 {
            identity(n)
        } else {
            orth_complement(&s.columns(0, k).into_owned())
        };
        let b = &a * &perp;
        let residual = if k == 0 {
            b.adjoint() * &b
        } else {
            let chosen = &a * s.columns(0, k);
            let gram = chosen.adjoint() * &chosen;
            let gram_inv = gram
                .cholesky()
                .ok_or_else(|| Error::Singular("equal-diagonal recursion".into()))?
                .inverse();
            let projector = identity(n) - &chosen * gram_inv * chosen.adjoint();
            b.adjoint() * projector * &b
        };
        let (lambda_k, v_k) = eigh_desc(&residual);
        let dim = n - k;
        let (first, last) = (lambda_k[0], lambda_k[dim - 1]);
        let (y1, y2) = mixing(first, last, geo);
        let mut y = CVector::zeros(dim);
        y[0] = c64(y1, 0.0);
        y[dim - 1] += c64(y2, 0.0);
        s.set_column(k, &(&perp * &v_k * &y));
        if k == n - 2 {
            // Step 4: the last column is the orthogonal partner within the
            // same two-dimensional space
            let mut y_last = CVector::zeros(dim);
            y_last[0] = c64(y2, 0.0);
            y_last[dim - 1] += c64(-y1, 0.0);
            if y2 == 0.0 {
                y_last = CVector::zeros(dim);
                y_last[dim - 1] = c64(1.0, 0.0);
            }
            s.set_column(n - 1, &(&perp * &v_k * &y_last));
        }
    }
    // Step 5
    Ok(u_m * s)
}

/// `U_Θ` with eigenvalues of `Θ` decreasing.
pub fn construct_q0_concave(theta: &CMatrix) -> Result<CMatrix> {
    check_theta(theta)?;
    Ok(eigh_desc(theta).1)
}

/// Lower Cholesky factor of `σ_b² (I - Q_0^H Θ Q_0)`.
pub fn mse_factor(theta: &CMatrix, q0: &CMatrix, sigma_b_sq: f64) -> Result<CMatrix> {
    let n = theta.nrows();
    let phi = (identity(n) - q0.adjoint() * theta * q0) * c64(sigma_b_sq, 0.0);
    cholesky_lower(&phi, "MSE factorization")
}

/// `C = D L^{-1}` with `D = diag(L)`.
pub fn optimal_c(l: &CMatrix) -> Result<PrecoderFeedback> {
    let n = l.nrows();
    if !l.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "L is {}x{}",
            n,
            l.ncols()
        )));
    }
    if let Some(i) = (0..n).find(|&i| l[(i, i)].norm() == 0.0) {
        return Err(Error::ZeroDiagonal(i));
    }
    let l_inv = l
        .solve_lower_triangular(&identity(n))
        .ok_or(Error::ZeroDiagonal(0))?;
    let d = CMatrix::from_diagonal(&l.diagonal());
    PrecoderFeedback::from_c(&(d * l_inv))
}
