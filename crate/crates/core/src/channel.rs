//! Estimated channels and Kronecker-structured estimation errors.
//!
//! The true channel of a hop is `H = H̄ + ΔH` with
//! `ΔH = Σ^{1/2} H_W Ψ^{1/2}`, where `H_W` has i.i.d. unit-variance circular
//! complex Gaussian entries. `Σ` captures receive-side error correlation and
//! `Ψ` transmit-side correlation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, complex_gaussian_matrix, eigvals_desc, frobenius, psd_sqrt, CMatrix};

/// Exponential correlation parameters of one hop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    rho_t: f64,
    rho_r: f64,
    sigma_e_sq: f64,
}

impl CorrelationSpec {
    pub fn new(rho_t: f64, rho_r: f64, sigma_e_sq: f64) -> Result<Self> {
        check_rho(rho_t, "rho_t")?;
        check_rho(rho_r, "rho_r")?;
        if !(sigma_e_sq > 0.0 && sigma_e_sq < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma_e_sq must lie in (0, 1), got {sigma_e_sq}"
            )));
        }
        Ok(CorrelationSpec {
            rho_t,
            rho_r,
            sigma_e_sq,
        })
    }

    pub fn rho_t(&self) -> f64 {
        self.rho_t
    }

    pub fn rho_r(&self) -> f64 {
        self.rho_r
    }

    pub fn sigma_e_sq(&self) -> f64 {
        self.sigma_e_sq
    }

    /// Transmit-side error covariance `Ψ = σ_e² R(ρ_t)`.
    pub fn psi(&self, n_t: usize) -> CMatrix {
        exp_matrix(n_t, self.rho_t, self.sigma_e_sq)
    }

    /// Receive-side error covariance `Σ = R(ρ_r)`.
    pub fn sigma(&self, n_r: usize) -> CMatrix {
        exp_matrix(n_r, self.rho_r, 1.0)
    }
}

fn check_rho(rho: f64, name: &str) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!(
            "{name} must lie in [0, 1), got {rho}"
        )));
    }
    Ok(())
}

fn exp_matrix(n: usize, rho: f64, scale: f64) -> CMatrix {
    CMatrix::from_fn(n, n, |i, j| {
        c64(scale * rho.powi(i.abs_diff(j) as i32), 0.0)
    })
}

/// `n x n` matrix with entries `scale · rho^{|i-j|}`.
pub fn exp_correlation(n: usize, rho: f64, scale: f64) -> Result<CMatrix> {
    check_rho(rho, "rho")?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scale must be positive, got {scale}"
        )));
    }
    Ok(exp_matrix(n, rho, scale))
}

/// Draws `H̄ = sqrt((1-σ_e²)/σ_e²) Σ^{1/2} G Ψ^{1/2}`.
pub fn sample_estimated_channel<R: Rng + ?Sized>(
    spec: &CorrelationSpec,
    n_r: usize,
    n_t: usize,
    rng: &mut R,
) -> CMatrix {
    let g = complex_gaussian_matrix(n_r, n_t, rng);
    let gain = ((1.0 - spec.sigma_e_sq) / spec.sigma_e_sq).sqrt();
    psd_sqrt(&spec.sigma(n_r)) * g * psd_sqrt(&spec.psi(n_t)) * c64(gain, 0.0)
}

/// One hop of the relay chain as seen by the designer.
#[derive(Debug, Clone, PartialEq)]
pub struct HopChannel {
    h_bar: CMatrix,
    psi: CMatrix,
    sigma: CMatrix,
    sigma_n_sq: f64,
    power: f64,
}

const HERMITIAN_TOLERANCE: f64 = 1e-12;

fn check_covariance(name: &str, a: &CMatrix, n: usize) -> Result<()> {
    if a.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{}, expected {n}x{n}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = frobenius(a).max(1.0);
    if frobenius(&(a - a.adjoint())) > HERMITIAN_TOLERANCE * scale {
        return Err(Error::InvalidParameter(format!("{name} is not Hermitian")));
    }
    if let Some(&min) = eigvals_desc(a).last() {
        if min < -HERMITIAN_TOLERANCE * scale {
            return Err(Error::InvalidParameter(format!(
                "{name} is not positive semidefinite (eigenvalue {min})"
            )));
        }
    }
    Ok(())
}

impl HopChannel {
    pub fn new(
        h_bar: CMatrix,
        psi: CMatrix,
        sigma: CMatrix,
        sigma_n_sq: f64,
        power: f64,
    ) -> Result<Self> {
        let (n_r, n_t) = h_bar.shape();
        check_covariance("psi", &psi, n_t)?;
        check_covariance("sigma", &sigma, n_r)?;
        if !(sigma_n_sq > 0.0 && sigma_n_sq.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be positive, got {sigma_n_sq}"
            )));
        }
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "power must be positive, got {power}"
            )));
        }
        Ok(HopChannel {
            h_bar,
            psi,
            sigma,
            sigma_n_sq,
            power,
        })
    }

    /// A hop whose error covariances come from `spec`.
    pub fn from_spec(
        spec: &CorrelationSpec,
        h_bar: CMatrix,
        sigma_n_sq: f64,
        power: f64,
    ) -> Result<Self> {
        let (n_r, n_t) = h_bar.shape();
        HopChannel::new(h_bar, spec.psi(n_t), spec.sigma(n_r), sigma_n_sq, power)
    }

    pub fn n_t(&self) -> usize {
        self.h_bar.ncols()
    }

    pub fn n_r(&self) -> usize {
        self.h_bar.nrows()
    }

    pub fn h_bar(&self) -> &CMatrix {
        &self.h_bar
    }

    pub fn psi(&self) -> &CMatrix {
        &self.psi
    }

    pub fn sigma(&self) -> &CMatrix {
        &self.sigma
    }

    pub fn sigma_n_sq(&self) -> f64 {
        self.sigma_n_sq
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    /// The same hop with the estimation error ignored (`Ψ = 0`).
    pub fn without_error(&self) -> HopChannel {
        HopChannel {
            psi: CMatrix::zeros(self.n_t(), self.n_t()),
            ..self.clone()
        }
    }
}

/// Draws `ΔH = Σ^{1/2} H_W Ψ^{1/2}` for `hop`.
pub fn sample_error<R: Rng + ?Sized>(hop: &HopChannel, rng: &mut R) -> CMatrix {
    let hw = complex_gaussian_matrix(hop.n_r(), hop.n_t(), rng);
    psd_sqrt(&hop.sigma) * hw * psd_sqrt(&hop.psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_real, identity};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exp_correlation_examples() {
        assert_eq!(exp_correlation(3, 0.0, 1.0).unwrap(), identity(3));
        assert_eq!(
            exp_correlation(2, 0.4, 1.0).unwrap(),
            from_real(2, 2, &[1.0, 0.4, 0.4, 1.0])
        );
        let a = exp_correlation(2, 0.5, 0.002).unwrap();
        assert!(frobenius(&(a - from_real(2, 2, &[0.002, 0.001, 0.001, 0.002]))) < 1e-18);
        assert!(exp_correlation(2, 1.0, 1.0).is_err());
        assert!(exp_correlation(2, -0.1, 1.0).is_err());
    }

    #[test]
    fn exp_correlation_is_positive_definite() {
        for &rho in &[0.0, 0.3, 0.9, 0.99] {
            for n in 1..8 {
                let min = *eigvals_desc(&exp_correlation(n, rho, 1.0).unwrap())
                    .last()
                    .unwrap();
                assert!(min > 0.0, "rho={rho} n={n} min={min}");
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(CorrelationSpec::new(0.5, 0.0, 0.0).is_err());
        assert!(CorrelationSpec::new(0.5, 0.0, 1.0).is_err());
        assert!(CorrelationSpec::new(1.0, 0.0, 0.1).is_err());
        assert!(CorrelationSpec::new(0.5, 0.4, 0.1).is_ok());
    }

    #[test]
    fn estimated_channel_is_deterministic() {
        let spec = CorrelationSpec::new(0.3, 0.2, 0.01).unwrap();
        let a = sample_estimated_channel(&spec, 3, 2, &mut ChaCha8Rng::seed_from_u64(8));
        let b = sample_estimated_channel(&spec, 3, 2, &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_psi_gives_zero_error() {
        let hop =
            HopChannel::new(identity(2), CMatrix::zeros(2, 2), identity(2), 1.0, 1.0).unwrap();
        let dh = sample_error(&hop, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(dh.iter().all(|z| *z == c64(0.0, 0.0)));
    }

    #[test]
    fn hop_validation() {
        let bad = from_real(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(HopChannel::new(identity(2), bad, identity(2), 1.0, 1.0).is_err());
        let indefinite = from_real(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(HopChannel::new(identity(2), identity(2), indefinite, 1.0, 1.0).is_err());
        assert!(HopChannel::new(identity(2), identity(3), identity(2), 1.0, 1.0).is_err());
        assert!(HopChannel::new(identity(2), identity(2), identity(2), 0.0, 1.0).is_err());
        assert!(HopChannel::new(identity(2), identity(2), identity(2), 1.0, -1.0).is_err());
    }

    // Monte Carlo helper: mean and standard error of |x|^2 over draws.
    fn second_moment(samples: &[f64]) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn estimated_channel_variance() {
        let spec = CorrelationSpec::new(0.0, 0.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut samples = Vec::with_capacity(100_000);
        while samples.len() < 100_000 {
            let h = sample_estimated_channel(&spec, 2, 2, &mut rng);
            samples.extend(h.iter().map(|z| z.norm_sqr()));
        }
        let (mean, se) = second_moment(&samples);
        assert!((mean - 0.5).abs() < 3.0 * se, "mean={mean} se={se}");
    }

    #[test]
    fn true_channel_has_unit_variance() {
        let spec = CorrelationSpec::new(0.5, 0.4, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut samples = Vec::new();
        while samples.len() < 90_000 {
            let h_bar = sample_estimated_channel(&spec, 3, 3, &mut rng);
            let hop = HopChannel::from_spec(&spec, h_bar.clone(), 1.0, 1.0).unwrap();
            let h = h_bar + sample_error(&hop, &mut rng);
            samples.extend(h.iter().map(|z| z.norm_sqr()));
        }
        let (mean, se) = second_moment(&samples);
        assert!((mean - 1.0).abs() < 3.0 * se, "mean={mean} se={se}");
    }

    #[test]
    fn error_cross_covariance() {
        let sigma = exp_correlation(2, 0.6, 1.0).unwrap();
        let psi = exp_correlation(2, 0.3, 0.5).unwrap();
        let hop = HopChannel::new(identity(2), psi.clone(), sigma.clone(), 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let draws = 100_000;
        // E[ΔH_{00} conj(ΔH_{11})] = Σ_{01} Ψ_{01}
        let products: Vec<f64> = (0..draws)
            .map(|_| {
                let dh = sample_error(&hop, &mut rng);
                (dh[(0, 0)] * dh[(1, 1)].conj()).re
            })
            .collect();
        let (mean, se) = second_moment(&products);
        let expected = (sigma[(0, 1)] * psi[(0, 1)]).re;
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "mean={mean} expected={expected} se={se}"
        );
    }

    #[test]
    fn error_variance_with_scaled_identity_psi() {
        let hop = HopChannel::new(
            identity(2),
            identity(2) * c64(0.01, 0.0),
            identity(2),
            1.0,
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut samples = Vec::new();
        while samples.len() < 100_000 {
            samples.extend(sample_error(&hop, &mut rng).iter().map(|z| z.norm_sqr()));
        }
        let (mean, se) = second_moment(&samples);
        assert!((mean - 0.01).abs() < 3.0 * se);
    }
}
