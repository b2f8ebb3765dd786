//! Numerical invariants every design must satisfy.

use serde::Serialize;

use super::{compute_m, compute_rx, mse_matrix, DesignResult, SystemModel};
use crate::linalg::{
    c64, eigvals_desc, frobenius, identity, is_unitary, svd_thin, trace_re, CMatrix,
};
use crate::majorization::Branch;

pub const POWER_TOLERANCE: f64 = 1e-9;
pub const FACTORIZATION_TOLERANCE: f64 = 1e-10;
pub const CONVEX_SPREAD_TOLERANCE: f64 = 1e-6;
pub const CONCAVE_OFFDIAG_TOLERANCE: f64 = 1e-10;
pub const PREFIX_TOLERANCE: f64 = 1e-8;
pub const KKT_TOLERANCE: f64 = 1e-6;
pub const MSE_TOLERANCE: f64 = 1e-8;
pub const UNITARY_TOLERANCE: f64 = 1e-10;
// Prefix products below this are compared absolutely: eigenvalues of Θ for
// streams without power are round-off.
const PREFIX_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> InvariantCheck {
    InvariantCheck {
        name: name.into(),
        value,
        tolerance,
        pass: value <= tolerance,
    }
}

/// Relative spread `(max - min) / max` of the diagonal of `l`.
pub fn diagonal_spread(l: &CMatrix) -> f64 {
    let d: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].norm()).collect();
    let max = d.iter().copied().fold(0.0, f64::max);
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        0.0
    } else {
        (max - min) / max
    }
}

/// Largest relative mismatch between the prefix products of two
/// decreasingly sorted vectors.
pub fn prefix_product_gap(a: &[f64], b: &[f64]) -> f64 {
    let (mut pa, mut pb, mut worst) = (1.0, 1.0, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        pa *= x.max(0.0);
        pb *= y.max(0.0);
        let scale = pa.abs().max(pb.abs());
        let gap = (pa - pb).abs();
        worst = worst.max(if scale > PREFIX_FLOOR {
            gap / scale
        } else {
            gap / PREFIX_FLOOR * PREFIX_TOLERANCE
        });
    }
    worst
}

/// Runs every invariant and reports each with its measured value.
pub fn check_design(model: &SystemModel, result: &DesignResult) -> Vec<InvariantCheck> {
    let n = model.n_streams();
    let sb2 = model.sigma_b_sq();
    let mut checks = Vec::new();

    for (k, (hop, f)) in model.hops().iter().zip(&result.f_matrices).enumerate() {
        let power = trace_re(&(f * f.adjoint()));
        checks.push(at_most(
            format!("power_f_hop{}", k + 1),
            (power - hop.power()).abs() / hop.power(),
            POWER_TOLERANCE,
        ));
    }
    match compute_rx(model, &result.p_matrices) {
        Ok(r) => {
            for (k, (hop, p)) in model.hops().iter().zip(&result.p_matrices).enumerate() {
                let power = trace_re(&(p * &r[k] * p.adjoint()));
                checks.push(at_most(
                    format!("power_p_hop{}", k + 1),
                    (power - hop.power()).abs() / hop.power(),
                    POWER_TOLERANCE,
                ));
            }
        }
        Err(_) => checks.push(at_most("power_p", f64::INFINITY, POWER_TOLERANCE)),
    }

    let q0 = &result.q_rotations[0];
    let target = (identity(n) - q0.adjoint() * &result.theta * q0) * c64(sb2, 0.0);
    let l = &result.l_matrix;
    checks.push(at_most(
        "cholesky_factorization",
        frobenius(&(l * l.adjoint() - target)) / (sb2 * n as f64),
        FACTORIZATION_TOLERANCE,
    ));

    match result.branch {
        Branch::Convex => {
            checks.push(at_most(
                "equal_diagonal_spread",
                diagonal_spread(l),
                CONVEX_SPREAD_TOLERANCE,
            ));
        }
        Branch::Concave => {
            let off = frobenius(&(l - CMatrix::from_diagonal(&l.diagonal())));
            checks.push(at_most(
                "diagonal_l_offdiag",
                off,
                CONCAVE_OFFDIAG_TOLERANCE,
            ));
            let b_mass = frobenius(result.feedback.b());
            checks.push(InvariantCheck {
                name: "linear_feedback_b_zero".into(),
                value: b_mass,
                tolerance: 0.0,
                pass: b_mass == 0.0,
            });
        }
    }

    let c = result.feedback.c();
    let residual = c - result.feedback.b() - identity(n);
    let mut structure_error = frobenius(&residual);
    for i in 0..n {
        structure_error += (c[(i, i)] - c64(1.0, 0.0)).norm();
        for j in i + 1..n {
            structure_error += c[(i, j)].norm();
        }
    }
    checks.push(at_most(
        "feedback_unit_lower_triangular",
        structure_error,
        0.0,
    ));

    let lambda = eigvals_desc(&result.theta);
    let (max, min) = (lambda[0], lambda[n - 1]);
    checks.push(InvariantCheck {
        name: "theta_eigenvalues_in_unit_interval".into(),
        value: max,
        tolerance: 1.0,
        pass: max < 1.0 && min >= -1e-12,
    });

    let mut worst_m: f64 = 0.0;
    for (hop, f) in model.hops().iter().zip(&result.f_matrices) {
        if let Ok(m) = compute_m(hop, f) {
            worst_m = worst_m.max(svd_thin(&m).s.first().copied().unwrap_or(0.0));
        } else {
            worst_m = f64::INFINITY;
        }
    }
    checks.push(InvariantCheck {
        name: "m_singular_values_below_one".into(),
        value: worst_m,
        tolerance: 1.0,
        pass: worst_m < 1.0,
    });

    let worst_q = result
        .q_rotations
        .iter()
        .map(|q| frobenius(&(q.adjoint() * q - identity(q.nrows()))))
        .fold(0.0, f64::max);
    checks.push(InvariantCheck {
        name: "rotations_unitary".into(),
        value: worst_q,
        tolerance: UNITARY_TOLERANCE,
        pass: result
            .q_rotations
            .iter()
            .all(|q| is_unitary(q, UNITARY_TOLERANCE)),
    });

    checks.push(at_most(
        "mse_prefix_equality",
        prefix_product_gap(&lambda, &result.gamma),
        PREFIX_TOLERANCE,
    ));

    checks.push(at_most(
        "waterfill_kkt",
        super::kkt_residual(&result.h, &result.lambda_f, &result.allocation_weights),
        KKT_TOLERANCE,
    ));

    let mse_gap = match mse_matrix(model, &result.g_matrix, &result.p_matrices, c) {
        Ok(phi) => (0..n)
            .map(|i| {
                (phi[(i, i)].re - result.predicted_mse[i]).abs()
                    / result.predicted_mse[i].max(1e-300)
            })
            .fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    };
    checks.push(at_most("predicted_mse_consistency", mse_gap, MSE_TOLERANCE));

    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_gap() {
        assert_eq!(prefix_product_gap(&[0.5, 0.25], &[0.5, 0.25]), 0.0);
        assert!((prefix_product_gap(&[0.5, 0.2], &[0.5, 0.25]) - 0.2).abs() < 1e-15);
        // numerically zero tails compare absolutely
        assert!(prefix_product_gap(&[0.5, 1e-17], &[0.5, 0.0]) < 1e-8);
    }

    #[test]
    fn spread() {
        assert_eq!(diagonal_spread(&identity(3)), 0.0);
        assert!((diagonal_spread(&crate::linalg::diag_real(&[2.0, 1.0])) - 0.5).abs() < 1e-15);
    }
}
