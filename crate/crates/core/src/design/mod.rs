//! Joint design of the THP source precoder, relay forwarding matrices and
//! destination equalizer.
//!
//! The pipeline runs backwards from the power allocation to the matrices:
//!
//! 1. whiten each hop into an effective channel and take its SVD;
//! 2. water-fill power across streams and hops;
//! 3. assemble the reformulated forwarding matrices `F_k`;
//! 4. form the per-hop gains `M_k`, the inter-hop rotations `Q_k` and `Θ`;
//! 5. pick the source rotation `Q_0` for the objective's branch and factor
//!    `σ_b² (I - Q_0^H Θ Q_0) = L L^H`;
//! 6. derive the feedback `C = diag(L) L^{-1}`, recover the physical `P_k`
//!    and compute the LMMSE equalizer.

pub mod checks;
pub mod rotation;
pub mod structure;
pub mod waterfill;

use crate::channel::HopChannel;
use crate::error::{Error, Result};
use crate::linalg::{c64, eigvals_desc, identity, pd_inv_sqrt, pd_inverse, trace_re, CMatrix};
use crate::majorization::{Branch, ObjectiveSpec};
use crate::thp::{sigma_b_sq, PrecoderFeedback, QamConstellation};

pub use checks::{check_design, InvariantCheck};
pub use rotation::{construct_q0_concave, construct_q0_convex, mse_factor, optimal_c};
pub use structure::{
    assemble_f, compute_m, compute_theta, effective_channel, gamma_values, optimal_q,
    EffectiveChannel, HopStructure,
};
pub use waterfill::{kkt_residual, waterfill, Waterfill, WaterfillOptions};

/// The relay chain seen by the designer.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    hops: Vec<HopChannel>,
    n_streams: usize,
    m: u32,
}

impl SystemModel {
    /// Validates stream count against every hop's antennas, the modulation
    /// order, and the covariance structure of every hop.
    pub fn new(hops: Vec<HopChannel>, n_streams: usize, m: u32) -> Result<Self> {
        if hops.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one hop is required".into(),
            ));
        }
        if n_streams == 0 {
            return Err(Error::InvalidParameter(
                "at least one stream is required".into(),
            ));
        }
        QamConstellation::new(m)?;
        for (k, hop) in hops.iter().enumerate() {
            if hop.n_t() < n_streams || hop.n_r() < n_streams {
                return Err(Error::DimensionMismatch(format!(
                    "hop {} has {} transmit and {} receive antennas, fewer than {} streams",
                    k + 1,
                    hop.n_t(),
                    hop.n_r(),
                    n_streams
                )));
            }
            structure::hop_structure(hop, k)?;
        }
        Ok(SystemModel { hops, n_streams, m })
    }

    pub fn hops(&self) -> &[HopChannel] {
        &self.hops
    }

    pub fn n_hops(&self) -> usize {
        self.hops.len()
    }

    pub fn n_streams(&self) -> usize {
        self.n_streams
    }

    pub fn modulation(&self) -> u32 {
        self.m
    }

    pub fn sigma_b_sq(&self) -> f64 {
        sigma_b_sq(self.m)
    }

    /// The same chain with every `Ψ_k` set to zero.
    pub fn without_error(&self) -> SystemModel {
        SystemModel {
            hops: self.hops.iter().map(HopChannel::without_error).collect(),
            ..self.clone()
        }
    }

    /// Expected shape of `P_k` (0-based `k`).
    pub fn precoder_shape(&self, k: usize) -> (usize, usize) {
        let cols = if k == 0 {
            self.n_streams
        } else {
            self.hops[k - 1].n_r()
        };
        (self.hops[k].n_t(), cols)
    }

    fn check_precoders(&self, p: &[CMatrix]) -> Result<()> {
        if p.len() != self.hops.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} precoders for {} hops",
                p.len(),
                self.hops.len()
            )));
        }
        for (k, pk) in p.iter().enumerate() {
            let expected = self.precoder_shape(k);
            if pk.shape() != expected {
                return Err(Error::DimensionMismatch(format!(
                    "P_{} is {}x{}, expected {}x{}",
                    k + 1,
                    pk.nrows(),
                    pk.ncols(),
                    expected.0,
                    expected.1
                )));
            }
        }
        Ok(())
    }

    fn check_square(&self, name: &str, a: &CMatrix) -> Result<()> {
        let n = self.n_streams;
        if a.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "{name} is {}x{}, expected {n}x{n}",
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(())
    }
}

/// Everything the design produces.
#[derive(Debug, Clone)]
pub struct DesignResult {
    pub branch: Branch,
    /// `P_1 … P_K`.
    pub p_matrices: Vec<CMatrix>,
    pub feedback: PrecoderFeedback,
    pub g_matrix: CMatrix,
    pub f_matrices: Vec<CMatrix>,
    /// `Q_0 … Q_K`.
    pub q_rotations: Vec<CMatrix>,
    /// Stream amplitudes `f_{k,n}` per hop.
    pub lambda_f: Vec<Vec<f64>>,
    /// Effective singular values `h_{k,n}` per hop (first `N`).
    pub h: Vec<Vec<f64>>,
    pub theta: CMatrix,
    pub l_matrix: CMatrix,
    /// `L_{n,n}²`.
    pub predicted_mse: Vec<f64>,
    pub gamma: Vec<f64>,
    pub waterfill: Waterfill,
    /// Weights the power allocation was run with.
    pub allocation_weights: Vec<f64>,
}

/// `[R_{x_0}, …, R_{x_K}]`; the last entry is the destination covariance.
pub fn received_covariances(model: &SystemModel, p: &[CMatrix]) -> Result<Vec<CMatrix>> {
    model.check_precoders(p)?;
    let mut r = vec![identity(model.n_streams) * c64(model.sigma_b_sq(), 0.0)];
    for (hop, pk) in model.hops.iter().zip(p) {
        let prev = r.last().expect("nonempty");
        let forwarded = pk * prev * pk.adjoint();
        let load = trace_re(&(&forwarded * hop.psi()));
        let next = hop.h_bar() * &forwarded * hop.h_bar().adjoint()
            + hop.sigma() * c64(load, 0.0)
            + identity(hop.n_r()) * c64(hop.sigma_n_sq(), 0.0);
        r.push(next);
    }
    Ok(r)
}

/// `[R_{x_0}, …, R_{x_{K-1}}]`, the covariances entering each hop.
pub fn compute_rx(model: &SystemModel, p: &[CMatrix]) -> Result<Vec<CMatrix>> {
    let mut r = received_covariances(model, p)?;
    r.pop();
    Ok(r)
}

/// `H̄_K P_K ⋯ H̄_1 P_1`.
pub fn mean_chain(model: &SystemModel, p: &[CMatrix]) -> Result<CMatrix> {
    model.check_precoders(p)?;
    Ok(model
        .hops
        .iter()
        .zip(p)
        .fold(identity(model.n_streams), |acc, (hop, pk)| {
            hop.h_bar() * pk * acc
        }))
}

/// MSE matrix `E[(G y - C b)(G y - C b)^H]` over data, noise and
/// estimation errors.
pub fn mse_matrix(model: &SystemModel, g: &CMatrix, p: &[CMatrix], c: &CMatrix) -> Result<CMatrix> {
    model.check_square("C", c)?;
    let r = received_covariances(model, p)?;
    let ry = r.last().expect("nonempty");
    if g.shape() != (model.n_streams, ry.nrows()) {
        return Err(Error::DimensionMismatch(format!(
            "G is {}x{}, expected {}x{}",
            g.nrows(),
            g.ncols(),
            model.n_streams,
            ry.nrows()
        )));
    }
    let t = mean_chain(model, p)?;
    let sb = c64(model.sigma_b_sq(), 0.0);
    let cross = g * &t * c.adjoint() * sb;
    Ok(g * ry * g.adjoint() - &cross - cross.adjoint() + c * c.adjoint() * sb)
}

/// `G = σ_b² C T^H R_y^{-1}`.
pub fn lmmse_equalizer(model: &SystemModel, p: &[CMatrix], c: &CMatrix) -> Result<CMatrix> {
    model.check_square("C", c)?;
    let r = received_covariances(model, p)?;
    let ry_inv = pd_inverse(r.last().expect("nonempty"), "destination covariance")?;
    let t = mean_chain(model, p)?;
    Ok(c * t.adjoint() * ry_inv * c64(model.sigma_b_sq(), 0.0))
}

/// Inverts the change of variables: `P_1 = F_1 Q_0 / σ_b` and
/// `P_k = F_k Q_{k-1} (W_{k-1} + I)^{-1/2} K_{k-1}^{-1/2}`.
pub fn recover_p(model: &SystemModel, f: &[CMatrix], q: &[CMatrix]) -> Result<Vec<CMatrix>> {
    let k_hops = model.n_hops();
    if f.len() != k_hops || q.len() < k_hops {
        return Err(Error::DimensionMismatch(format!(
            "{} forwarding matrices and {} rotations for {k_hops} hops",
            f.len(),
            q.len()
        )));
    }
    let sigma_b = model.sigma_b_sq().sqrt();
    let mut p = Vec::with_capacity(k_hops);
    p.push(&f[0] * &q[0] * c64(1.0 / sigma_b, 0.0));
    for k in 1..k_hops {
        let prev = &model.hops[k - 1];
        let (w, k_inv_sqrt) = structure::whitened_gain(prev, &f[k - 1])?;
        let n = w.nrows();
        let inner = pd_inv_sqrt(&(w + identity(n)), "relay gain")?;
        p.push(&f[k] * &q[k] * inner * k_inv_sqrt);
    }
    Ok(p)
}

/// Designs with the objective's default branch.
pub fn design(model: &SystemModel, objective: &ObjectiveSpec) -> Result<DesignResult> {
    design_with_branch(
        model,
        objective,
        objective.default_branch(),
        WaterfillOptions::default(),
    )
}

/// The estimated-CSI-only baseline: the same pipeline with `Ψ_k = 0`.
pub fn design_non_robust(model: &SystemModel, objective: &ObjectiveSpec) -> Result<DesignResult> {
    design(&model.without_error(), objective)
}

/// Full pipeline on an explicit branch.
pub fn design_with_branch(
    model: &SystemModel,
    objective: &ObjectiveSpec,
    branch: Branch,
    options: WaterfillOptions,
) -> Result<DesignResult> {
    if !objective.supports(branch) {
        return Err(Error::InvalidParameter(format!(
            "a {:?} objective cannot use the {branch:?} branch",
            objective.classification()
        )));
    }
    let n = model.n_streams;
    let hops = &model.hops;

    let effective: Vec<EffectiveChannel> = hops
        .iter()
        .enumerate()
        .map(|(k, hop)| {
            let eff = effective_channel(hop, k)?;
            structure::check_rank(&eff, n, k)?;
            Ok(eff)
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.at_step("effective channel"))?;
    let h: Vec<Vec<f64>> = effective.iter().map(|e| e.h[..n].to_vec()).collect();

    let weights = objective
        .allocation_weights(branch, n)
        .map_err(|e| e.at_step("power allocation"))?;
    let budgets: Vec<f64> = hops.iter().map(HopChannel::power).collect();
    let wf =
        waterfill(&h, &budgets, &weights, options).map_err(|e| e.at_step("power allocation"))?;

    let f_matrices: Vec<CMatrix> = hops
        .iter()
        .enumerate()
        .map(|(k, hop)| {
            let cols = model.precoder_shape(k).1;
            assemble_f(hop, &wf.f[k], &effective[k].v, cols, k)
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.at_step("forwarding structure"))?;

    let m: Vec<CMatrix> = hops
        .iter()
        .zip(&f_matrices)
        .map(|(hop, f)| compute_m(hop, f))
        .collect::<Result<_>>()
        .map_err(|e: Error| e.at_step("relay gains"))?;
    let q_relay = optimal_q(&m);
    let theta = compute_theta(&m, &q_relay).map_err(|e| e.at_step("theta"))?;

    let q0 = match branch {
        Branch::Convex => construct_q0_convex(&theta, model.sigma_b_sq().sqrt()),
        Branch::Concave => construct_q0_concave(&theta),
    }
    .map_err(|e| e.at_step("source rotation"))?;
    let l = mse_factor(&theta, &q0, model.sigma_b_sq()).map_err(|e| e.at_step("cholesky"))?;
    let feedback = match branch {
        Branch::Convex => optimal_c(&l).map_err(|e| e.at_step("feedback"))?,
        Branch::Concave => PrecoderFeedback::identity(n),
    };

    let mut q_rotations = Vec::with_capacity(q_relay.len() + 1);
    q_rotations.push(q0);
    q_rotations.extend(q_relay);
    let p_matrices =
        recover_p(model, &f_matrices, &q_rotations).map_err(|e| e.at_step("recover precoders"))?;
    let g_matrix =
        lmmse_equalizer(model, &p_matrices, feedback.c()).map_err(|e| e.at_step("equalizer"))?;
    let gamma = gamma_values(hops, &f_matrices, n).map_err(|e| e.at_step("gamma"))?;
    let predicted_mse = (0..n).map(|i| l[(i, i)].norm_sqr()).collect();

    Ok(DesignResult {
        branch,
        p_matrices,
        feedback,
        g_matrix,
        f_matrices,
        q_rotations,
        lambda_f: wf.f.clone(),
        h,
        theta,
        l_matrix: l,
        predicted_mse,
        gamma,
        waterfill: wf,
        allocation_weights: weights,
    })
}

/// Eigenvalues of `Θ`, decreasing.
pub fn theta_eigenvalues(result: &DesignResult) -> Vec<f64> {
    eigvals_desc(&result.theta)
}
