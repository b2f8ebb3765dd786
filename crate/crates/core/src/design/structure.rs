//! Per-hop structure of the optimal forwarding matrices.
//!
//! Each hop is whitened into an effective channel `𝓗_k` whose singular
//! values drive the power allocation. The forwarding matrix in the
//! reformulated variables is `F_k = sqrt(ξ_k) A_k^{-1/2} V_{𝓗,N} Λ_F U^H`
//! with `A_k = α_k P_k Ψ_k + σ² I`, and the inter-hop rotations `Q_k` align
//! the singular bases of consecutive `M_k`.

use crate::channel::HopChannel;
use crate::error::{Error, Result};
use crate::linalg::{
    c64, diag_real, eigvals_desc, identity, pd_inv_sqrt, scalar_multiple_of_identity, svd_full,
    svd_thin, trace_re, CMatrix,
};

/// Relative tolerance for recognizing `Ψ ∝ I` or `Σ ∝ I`.
pub const PROPORTIONAL_TOLERANCE: f64 = 1e-10;
/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Which closed form applies to a hop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HopStructure {
    /// `Ψ = c I` (including `c = 0`).
    ScaledPsi(f64),
    /// `Σ = β I`.
    ScaledSigma(f64),
}

/// Classifies `hop`, numbering hops from 1 in errors.
pub fn hop_structure(hop: &HopChannel, index: usize) -> Result<HopStructure> {
    if let Some(c) = scalar_multiple_of_identity(hop.psi(), PROPORTIONAL_TOLERANCE) {
        return Ok(HopStructure::ScaledPsi(c));
    }
    if let Some(beta) = scalar_multiple_of_identity(hop.sigma(), PROPORTIONAL_TOLERANCE) {
        return Ok(HopStructure::ScaledSigma(beta));
    }
    Err(Error::UnsupportedCovariance { hop: index + 1 })
}

/// `α_k = Tr(Σ_k) / N_R`.
pub fn alpha(hop: &HopChannel) -> f64 {
    trace_re(hop.sigma()) / hop.n_r() as f64
}

/// `A_k = α_k P_k Ψ_k + σ² I`.
pub fn regularizer(hop: &HopChannel) -> CMatrix {
    hop.psi() * c64(alpha(hop) * hop.power(), 0.0)
        + identity(hop.n_t()) * c64(hop.sigma_n_sq(), 0.0)
}

/// `K_F = Tr(F F^H Ψ) Σ + σ² I`.
pub fn noise_covariance(hop: &HopChannel, f: &CMatrix) -> CMatrix {
    let load = trace_re(&(f * f.adjoint() * hop.psi()));
    hop.sigma() * c64(load, 0.0) + identity(hop.n_r()) * c64(hop.sigma_n_sq(), 0.0)
}

#[derive(Debug, Clone)]
pub struct EffectiveChannel {
    pub matrix: CMatrix,
    pub u: CMatrix,
    /// Singular values, decreasing.
    pub h: Vec<f64>,
    pub v: CMatrix,
}

/// `𝓗_k = (K_F / η)^{-1/2} H̄_k A_k^{-1/2}` in closed form.
pub fn effective_channel(hop: &HopChannel, index: usize) -> Result<EffectiveChannel> {
    let s2 = hop.sigma_n_sq();
    let matrix = match hop_structure(hop, index)? {
        HopStructure::ScaledPsi(c) => {
            let k = hop.sigma() * c64(c * hop.power(), 0.0) + identity(hop.n_r()) * c64(s2, 0.0);
            pd_inv_sqrt(&k, "equivalent noise covariance")? * hop.h_bar()
        }
        HopStructure::ScaledSigma(_) => {
            hop.h_bar() * pd_inv_sqrt(&regularizer(hop), "transmit regularizer")?
        }
    };
    let svd = svd_thin(&matrix);
    Ok(EffectiveChannel {
        u: svd.u,
        h: svd.s,
        v: svd.v,
        matrix,
    })
}

/// Fails when `𝓗` supports fewer than `n` streams.
pub fn check_rank(channel: &EffectiveChannel, n: usize, index: usize) -> Result<()> {
    let largest = channel.h.first().copied().unwrap_or(0.0);
    let rank = channel
        .h
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE * largest && s > 0.0)
        .count();
    if rank < n {
        return Err(Error::RankDeficient {
            hop: index + 1,
            rank,
            needed: n,
        });
    }
    Ok(())
}

/// Builds `F_k` with `cols` columns from the amplitudes `f` (length `N`)
/// and the right singular vectors of `𝓗_k`. Columns beyond `N` are zero.
pub fn assemble_f(
    hop: &HopChannel,
    f: &[f64],
    v_h: &CMatrix,
    cols: usize,
    index: usize,
) -> Result<CMatrix> {
    let n = f.len();
    if v_h.nrows() != hop.n_t() || v_h.ncols() < n || cols < n {
        return Err(Error::DimensionMismatch(format!(
            "hop {}: {} streams with {}x{} singular basis and {cols} columns",
            index + 1,
            n,
            v_h.nrows(),
            v_h.ncols()
        )));
    }
    let a_inv_sqrt = pd_inv_sqrt(&regularizer(hop), "transmit regularizer")?;
    let core = &a_inv_sqrt * v_h.columns(0, n) * diag_real(f);
    // τ = Tr[V^H A^{-1/2} Ψ A^{-1/2} V Λ²]
    let tau = trace_re(&(core.adjoint() * hop.psi() * &core));
    let denominator = 1.0 - alpha(hop) * tau;
    if !(denominator > 0.0) {
        return Err(Error::InconsistentScaling {
            hop: index + 1,
            denominator,
        });
    }
    let xi = hop.sigma_n_sq() / denominator;
    let mut out = CMatrix::zeros(hop.n_t(), cols);
    out.columns_mut(0, n)
        .copy_from(&(core * c64(xi.sqrt(), 0.0)));
    Ok(out)
}

/// `W_k = K^{-1/2} H̄ F F^H H̄^H K^{-1/2}` and `K^{-1/2}`.
pub fn whitened_gain(hop: &HopChannel, f: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    let k_inv_sqrt = pd_inv_sqrt(&noise_covariance(hop, f), "equivalent noise covariance")?;
    let g = &k_inv_sqrt * hop.h_bar() * f;
    Ok((&g * g.adjoint(), k_inv_sqrt))
}

/// `M_k = (W + I)^{-1/2} K^{-1/2} H̄ F`.
pub fn compute_m(hop: &HopChannel, f: &CMatrix) -> Result<CMatrix> {
    let (w, k_inv_sqrt) = whitened_gain(hop, f)?;
    let n = w.nrows();
    Ok(pd_inv_sqrt(&(w + identity(n)), "relay gain")? * k_inv_sqrt * hop.h_bar() * f)
}

/// `γ_n = Π_k λ_n / (1 + λ_n)` over the decreasing eigenvalues of
/// `F_k^H H̄_k^H K_k^{-1} H̄_k F_k`, truncated to `n` streams.
pub fn gamma_values(hops: &[HopChannel], f: &[CMatrix], n: usize) -> Result<Vec<f64>> {
    let mut gamma = vec![1.0; n];
    for (hop, fk) in hops.iter().zip(f) {
        let k_inv_sqrt = pd_inv_sqrt(&noise_covariance(hop, fk), "equivalent noise covariance")?;
        let g = k_inv_sqrt * hop.h_bar() * fk;
        let lambda = eigvals_desc(&(g.adjoint() * g));
        for (i, gi) in gamma.iter_mut().enumerate() {
            let l = lambda.get(i).copied().unwrap_or(0.0).max(0.0);
            *gi *= l / (1.0 + l);
        }
    }
    Ok(gamma)
}

/// `Q_k = V_{M_{k+1}} U_{M_k}^H` for `k < K` and `Q_K = I`.
pub fn optimal_q(m: &[CMatrix]) -> Vec<CMatrix> {
    let svds: Vec<_> = m.iter().map(svd_full).collect();
    let mut q: Vec<CMatrix> = (0..m.len().saturating_sub(1))
        .map(|k| &svds[k + 1].v * svds[k].u.adjoint())
        .collect();
    if let Some(last) = m.last() {
        q.push(identity(last.nrows()));
    }
    q
}

/// `Θ = (Q_K M_K ⋯ Q_1 M_1)^H (Q_K M_K ⋯ Q_1 M_1)`.
pub fn compute_theta(m: &[CMatrix], q: &[CMatrix]) -> Result<CMatrix> {
    if m.is_empty() || m.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} relay gains with {} rotations",
            m.len(),
            q.len()
        )));
    }
    let mut chain = identity(m[0].ncols());
    for (k, (mk, qk)) in m.iter().zip(q).enumerate() {
        if mk.ncols() != chain.nrows() || qk.ncols() != mk.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "hop {}: gain {}x{} and rotation {}x{} do not chain",
                k + 1,
                mk.nrows(),
                mk.ncols(),
                qk.nrows(),
                qk.ncols()
            )));
        }
        chain = qk * mk * chain;
    }
    Ok(chain.adjoint() * chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::exp_correlation;
    use crate::linalg::{complex_gaussian_matrix, frobenius, haar_unitary, is_unitary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scaled(n: usize, s: f64) -> CMatrix {
        identity(n) * c64(s, 0.0)
    }

    fn random_hop(seed: u64, n: usize, psi_scaled: bool) -> HopChannel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = complex_gaussian_matrix(n, n, &mut rng);
        let (psi, sigma) = if psi_scaled {
            (scaled(n, 0.01), exp_correlation(n, 0.6, 1.0).unwrap())
        } else {
            (exp_correlation(n, 0.5, 0.01).unwrap(), identity(n))
        };
        HopChannel::new(h, psi, sigma, 0.05, 1.0).unwrap()
    }

    #[test]
    fn error_free_effective_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = complex_gaussian_matrix(3, 3, &mut rng);
        let hop = HopChannel::new(
            h.clone(),
            CMatrix::zeros(3, 3),
            exp_correlation(3, 0.7, 1.0).unwrap(),
            0.25,
            1.0,
        )
        .unwrap();
        let eff = effective_channel(&hop, 0).unwrap();
        assert!(frobenius(&(eff.matrix - h * c64(2.0, 0.0))) < 1e-12);
        assert!(eff.h.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn identity_channel_has_equal_gains() {
        let (se, p, s2) = (0.01, 2.0, 0.1);
        let hop = HopChannel::new(identity(4), scaled(4, se), identity(4), s2, p).unwrap();
        let eff = effective_channel(&hop, 0).unwrap();
        let expected = 1.0 / (se * p + s2).sqrt();
        assert!(eff.h.iter().all(|h| (h - expected).abs() < 1e-12));
    }

    #[test]
    fn rejects_general_covariances() {
        let hop = HopChannel::new(
            identity(2),
            exp_correlation(2, 0.5, 0.01).unwrap(),
            exp_correlation(2, 0.4, 1.0).unwrap(),
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(
            effective_channel(&hop, 1).unwrap_err(),
            Error::UnsupportedCovariance { hop: 2 }
        );
    }

    #[test]
    fn rank_check_names_hop() {
        let mut h = CMatrix::zeros(3, 3);
        h[(0, 0)] = c64(1.0, 0.0);
        let hop = HopChannel::new(h, CMatrix::zeros(3, 3), identity(3), 1.0, 1.0).unwrap();
        let eff = effective_channel(&hop, 2).unwrap();
        assert_eq!(
            check_rank(&eff, 2, 2).unwrap_err(),
            Error::RankDeficient {
                hop: 3,
                rank: 1,
                needed: 2
            }
        );
    }

    #[test]
    fn error_free_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hop = HopChannel::new(
            complex_gaussian_matrix(3, 3, &mut rng),
            CMatrix::zeros(3, 3),
            identity(3),
            0.3,
            2.0,
        )
        .unwrap();
        let eff = effective_channel(&hop, 0).unwrap();
        let f = [1.2f64.sqrt(), 0.8f64.sqrt()];
        let fm = assemble_f(&hop, &f, &eff.v, 2, 0).unwrap();
        let expected = eff.v.columns(0, 2) * diag_real(&f);
        assert!(frobenius(&(fm.clone() - expected)) < 1e-12);
        assert!((trace_re(&(&fm * fm.adjoint())) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn xi_closed_form_for_scaled_identity_errors() {
        let (se, p, s2) = (0.02, 3.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hop = HopChannel::new(
            complex_gaussian_matrix(2, 2, &mut rng),
            scaled(2, se),
            identity(2),
            s2,
            p,
        )
        .unwrap();
        let eff = effective_channel(&hop, 0).unwrap();
        let f = [2.0f64.sqrt(), 1.0];
        let fm = assemble_f(&hop, &f, &eff.v, 2, 0).unwrap();
        // A = η I and ξ = η = α P σ_e² + σ², so F = V Λ
        let expected = eff.v.columns(0, 2) * diag_real(&f);
        assert!(frobenius(&(&fm - expected)) < 1e-12);
        assert!((trace_re(&(&fm * fm.adjoint())) - p).abs() < 1e-12 * p);
    }

    #[test]
    fn assembled_f_diagonalizes_and_meets_power() {
        for seed in 0..100u64 {
            let hop = random_hop(seed, 3, seed % 2 == 0);
            let eff = effective_channel(&hop, 0).unwrap();
            let raw = [0.5, 0.3, 0.2];
            let f: Vec<f64> = raw.iter().map(|x: &f64| x.sqrt()).collect();
            let fm = assemble_f(&hop, &f, &eff.v, 3, 0).unwrap();
            let power = trace_re(&(&fm * fm.adjoint()));
            assert!(
                (power - hop.power()).abs() <= 1e-9 * hop.power(),
                "seed {seed}: {power}"
            );
            let (_, k_inv_sqrt) = whitened_gain(&hop, &fm).unwrap();
            let g = k_inv_sqrt * hop.h_bar() * &fm;
            let gram = g.adjoint() * g;
            for i in 0..3 {
                let expected = raw[i] * eff.h[i] * eff.h[i];
                assert!((gram[(i, i)].re - expected).abs() < 1e-9 * expected.max(1.0));
                for j in 0..3 {
                    if i != j {
                        assert!(gram[(i, j)].norm() < 1e-9 * expected.max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn scalar_m_and_theta() {
        let hop = HopChannel::new(
            identity(1) * c64(2.0, 0.0),
            CMatrix::zeros(1, 1),
            identity(1),
            1.0,
            1.0,
        )
        .unwrap();
        let m = compute_m(&hop, &identity(1)).unwrap();
        assert!((m[(0, 0)].re - 2.0 / 5f64.sqrt()).abs() < 1e-15);
        let q = optimal_q(std::slice::from_ref(&m));
        assert_eq!(q, vec![identity(1)]);
        let theta = compute_theta(&[m], &q).unwrap();
        assert!((theta[(0, 0)].re - 0.8).abs() < 1e-15);
        assert_eq!(
            compute_m(&hop, &CMatrix::zeros(1, 1)).unwrap(),
            CMatrix::zeros(1, 1)
        );
    }

    #[test]
    fn m_singular_values_below_one() {
        for seed in 0..100u64 {
            let hop = random_hop(seed, 3, seed % 2 == 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let f = complex_gaussian_matrix(3, 3, &mut rng) * c64(3.0, 0.0);
            let m = compute_m(&hop, &f).unwrap();
            assert!(svd_thin(&m).s.iter().all(|s| *s < 1.0 && *s >= 0.0));
        }
    }

    #[test]
    fn gamma_examples() {
        // F^H H̄^H K^{-1} H̄ F = 3 with K = 1
        let hop = HopChannel::new(
            identity(1) * c64(3f64.sqrt(), 0.0),
            CMatrix::zeros(1, 1),
            identity(1),
            1.0,
            1.0,
        )
        .unwrap();
        let g = gamma_values(std::slice::from_ref(&hop), &[identity(1)], 1).unwrap();
        assert!((g[0] - 0.75).abs() < 1e-15);
        let g = gamma_values(&[hop.clone(), hop.clone()], &[identity(1), identity(1)], 1).unwrap();
        assert!((g[0] - 0.5625).abs() < 1e-15);
        let g = gamma_values(&[hop.clone(), hop], &[identity(1), CMatrix::zeros(1, 1)], 1).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn optimal_q_is_unitary_and_identity_for_diagonal_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m: Vec<CMatrix> = (0..3)
            .map(|_| complex_gaussian_matrix(3, 3, &mut rng))
            .collect();
        for q in optimal_q(&m) {
            assert!(is_unitary(&q, 1e-12));
        }
        let d = vec![diag_real(&[0.9, 0.5, 0.1]), diag_real(&[0.8, 0.7, 0.2])];
        for q in optimal_q(&d) {
            assert!(frobenius(&(q - identity(3))) < 1e-12);
        }
    }

    #[test]
    fn theta_dimension_checks() {
        assert!(compute_theta(&[], &[]).is_err());
        let m = vec![CMatrix::zeros(3, 2)];
        assert!(compute_theta(&m, &[identity(2)]).is_err());
        let theta =
            compute_theta(&m, &[haar_unitary(3, &mut ChaCha8Rng::seed_from_u64(1))]).unwrap();
        assert_eq!(theta, CMatrix::zeros(2, 2));
    }
}
