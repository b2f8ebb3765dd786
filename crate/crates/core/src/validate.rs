//! Self-contained property battery over random systems.
//!
//! Each suite draws its own random instances from the battery seed and
//! reports the worst measured value of every property against its
//! tolerance. The battery backs the `validate` command of the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{sample_estimated_channel, CorrelationSpec, HopChannel};
use crate::design::checks::diagonal_spread;
use crate::design::{
    check_design, compute_m, compute_theta, construct_q0_convex, design_with_branch, kkt_residual,
    mse_factor, mse_matrix, waterfill, DesignResult, InvariantCheck, SystemModel, WaterfillOptions,
};
use crate::error::Result;
use crate::linalg::{
    c64, complex_gaussian_matrix, diag_real, eigvals_desc, frobenius, haar_unitary, identity,
    trace_re, CMatrix,
};
use crate::majorization::{
    classify_objective, multiplicatively_majorizes, weakly_multiplicatively_majorizes, Branch,
    NonnegVector, ObjectiveSpec, Verdict,
};
use crate::sim::{empirical_mse, Transceiver};

/// Deliberate corruption applied to every design before it is checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Fault {
    /// Multiplies `F_k` and `P_k` of the 0-based hop by `factor`.
    ScaleForwarding { hop: usize, factor: f64 },
}

impl Fault {
    pub fn apply(&self, result: &mut DesignResult) {
        match *self {
            Fault::ScaleForwarding { hop, factor } => {
                if let Some(f) = result.f_matrices.get_mut(hop) {
                    *f *= c64(factor, 0.0);
                }
                if let Some(p) = result.p_matrices.get_mut(hop) {
                    *p *= c64(factor, 0.0);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationConfig {
    pub seed: u64,
    /// Random systems for the design invariants.
    pub systems: usize,
    /// Random unitary draws per system for the weak-majorization check.
    pub rotation_draws: usize,
    pub theta_draws: usize,
    pub waterfill_instances: usize,
    pub lmmse_perturbations: usize,
    pub mse_designs: usize,
    pub mse_error_draws: usize,
    pub mse_symbols: usize,
    pub classifier_trials: usize,
    pub fault: Option<Fault>,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            seed: 2024,
            systems: 100,
            rotation_draws: 50,
            theta_draws: 100,
            waterfill_instances: 20,
            lmmse_perturbations: 100,
            mse_designs: 2,
            mse_error_draws: 200,
            mse_symbols: 200,
            classifier_trials: 1000,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub suite: &'static str,
    pub check: InvariantCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.check.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationRow> {
        self.rows.iter().filter(|r| !r.check.pass)
    }

    /// Fixed-width PASS/FAIL table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<6} {:<14} {:<40} {:>12} {:>12}\n",
            "status", "suite", "check", "value", "tolerance"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<6} {:<14} {:<40} {:>12.3e} {:>12.3e}\n",
                if r.check.pass { "PASS" } else { "FAIL" },
                r.suite,
                r.check.name,
                r.check.value,
                r.check.tolerance
            ));
        }
        out
    }
}

/// Collects per-instance checks into one row per name holding the worst
/// value; the row passes only if every instance passed.
#[derive(Default)]
struct Worst(Vec<InvariantCheck>);

impl Worst {
    fn add(&mut self, check: InvariantCheck) {
        match self.0.iter_mut().find(|c| c.name == check.name) {
            Some(c) => {
                if check.value > c.value || check.value.is_nan() {
                    c.value = check.value;
                }
                c.pass &= check.pass;
            }
            None => self.0.push(check),
        }
    }

    fn rows(self, suite: &'static str) -> impl Iterator<Item = ValidationRow> {
        self.0
            .into_iter()
            .map(move |check| ValidationRow { suite, check })
    }
}

fn flag(name: &str, pass: bool) -> InvariantCheck {
    InvariantCheck {
        name: name.into(),
        value: if pass { 0.0 } else { 1.0 },
        tolerance: 0.0,
        pass,
    }
}

fn at_most(name: &str, value: f64, tolerance: f64) -> InvariantCheck {
    InvariantCheck {
        name: name.into(),
        value,
        tolerance,
        pass: value <= tolerance,
    }
}

/// Ranges of the random system generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSystemOptions {
    pub hop_counts: Vec<usize>,
    pub stream_counts: Vec<usize>,
    pub snr_db: (f64, f64),
    pub sigma_e_sq: (f64, f64),
    pub max_rho: f64,
    pub modulation: u32,
}

impl Default for RandomSystemOptions {
    fn default() -> Self {
        RandomSystemOptions {
            hop_counts: vec![2, 3],
            stream_counts: vec![2, 4],
            snr_db: (5.0, 35.0),
            sigma_e_sq: (0.001, 0.01),
            max_rho: 0.9,
            modulation: 16,
        }
    }
}

/// A square system (`N = N_T = N_R`) where each hop has either `Ψ ∝ I` or
/// `Σ ∝ I`, chosen at random.
pub fn random_system(rng: &mut ChaCha8Rng, options: &RandomSystemOptions) -> Result<SystemModel> {
    let k = options.hop_counts[rng.random_range(0..options.hop_counts.len())];
    let n = options.stream_counts[rng.random_range(0..options.stream_counts.len())];
    let hops = (0..k)
        .map(|_| {
            let rho = rng.random_range(0.0..options.max_rho);
            let sigma_e_sq = rng.random_range(options.sigma_e_sq.0..=options.sigma_e_sq.1);
            let spec = if rng.random_bool(0.5) {
                CorrelationSpec::new(rho, 0.0, sigma_e_sq)?
            } else {
                CorrelationSpec::new(0.0, rho, sigma_e_sq)?
            };
            let snr = rng.random_range(options.snr_db.0..=options.snr_db.1);
            let h_bar = sample_estimated_channel(&spec, n, n, rng);
            HopChannel::from_spec(&spec, h_bar, 10f64.powf(-snr / 10.0), 1.0)
        })
        .collect::<Result<_>>()?;
    SystemModel::new(hops, n, options.modulation)
}

fn allocation_value(h: &[Vec<f64>], f2: &[Vec<f64>], w: &[f64]) -> f64 {
    (0..w.len())
        .map(|n| {
            let gamma: f64 = h
                .iter()
                .zip(f2)
                .map(|(hk, pk)| {
                    let x = pk[n] * hk[n] * hk[n];
                    x / (1.0 + x)
                })
                .product();
            w[n] * (1.0 - gamma).ln()
        })
        .sum()
}

/// Brute-force minimum of `Σ_n w_n log(1 - γ_n)` for two streams: a grid
/// over each hop's power split followed by repeated zoomed grids.
pub fn brute_force_allocation(
    h: &[Vec<f64>],
    budgets: &[f64],
    weights: &[f64],
) -> (Vec<Vec<f64>>, f64) {
    assert_eq!(
        weights.len(),
        2,
        "the brute-force oracle handles two streams"
    );
    let k = h.len();
    let powers = |t: &[f64]| -> Vec<Vec<f64>> {
        t.iter()
            .zip(budgets)
            .map(|(&t, &p)| vec![t * p, (1.0 - t) * p])
            .collect()
    };
    let eval = |t: &[f64]| allocation_value(h, &powers(t), weights);
    let mut best = vec![0.5; k];
    let mut best_value = eval(&best);
    let (mut lo, mut hi) = (vec![0.0; k], vec![1.0; k]);
    let points = 41usize;
    for _ in 0..40 {
        let mut index = vec![0usize; k];
        loop {
            let t: Vec<f64> = (0..k)
                .map(|d| lo[d] + (hi[d] - lo[d]) * index[d] as f64 / (points - 1) as f64)
                .collect();
            let v = eval(&t);
            if v < best_value {
                best_value = v;
                best = t;
            }
            let mut d = 0;
            while d < k {
                index[d] += 1;
                if index[d] < points {
                    break;
                }
                index[d] = 0;
                d += 1;
            }
            if d == k {
                break;
            }
        }
        for d in 0..k {
            let half = 2.0 * (hi[d] - lo[d]) / (points - 1) as f64;
            lo[d] = (best[d] - half).max(0.0);
            hi[d] = (best[d] + half).min(1.0);
        }
    }
    (powers(&best), best_value)
}

fn majorization_suite(config: &ValidationConfig) -> Vec<ValidationRow> {
    let v = |x: &[f64]| NonnegVector::new(x.to_vec()).unwrap();
    let mut w = Worst::default();
    let examples = [
        (
            multiplicatively_majorizes(&v(&[4.0, 1.0]), &v(&[8.0, 0.5])),
            true,
        ),
        (
            multiplicatively_majorizes(&v(&[3.0, 2.0, 1.0]), &v(&[3.0, 2.0, 1.0])),
            true,
        ),
        (
            multiplicatively_majorizes(&v(&[2.0, 2.0]), &v(&[1.0, 1.0])),
            false,
        ),
        (
            weakly_multiplicatively_majorizes(&v(&[1.0, 1.0]), &v(&[2.0, 1.0])),
            true,
        ),
        (
            weakly_multiplicatively_majorizes(&v(&[3.0, 1.0]), &v(&[2.0, 2.0])),
            false,
        ),
    ];
    w.add(flag(
        "predicate_examples",
        examples.iter().all(|(got, want)| got.as_ref() == Ok(want)),
    ));

    let seed = config.seed;
    let trials = config.classifier_trials;
    let sum = |z: &[f64]| z.iter().sum::<f64>();
    let max = |z: &[f64]| z.iter().copied().fold(0.0, f64::max);
    let prod = |z: &[f64]| z.iter().product::<f64>();
    let min = |z: &[f64]| z.iter().copied().fold(f64::INFINITY, f64::min);
    for s in 0..3 {
        w.add(flag(
            "classifier_sum_convex",
            classify_objective(sum, 3, trials, seed + s) == Verdict::MSchurConvex,
        ));
        w.add(flag(
            "classifier_max_convex",
            classify_objective(max, 3, trials, seed + s) == Verdict::MSchurConvex,
        ));
        w.add(flag(
            "classifier_prod_both",
            classify_objective(prod, 3, trials, seed + s) == Verdict::Both,
        ));
        w.add(flag(
            "classifier_min_concave",
            classify_objective(min, 3, trials, seed + s) == Verdict::MSchurConcave,
        ));
    }
    w.rows("majorization").collect()
}

fn design_suite(config: &ValidationConfig, models: &[SystemModel]) -> Vec<ValidationRow> {
    let mut w = Worst::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x51);
    let prod = ObjectiveSpec::prod_mse();
    for model in models {
        for branch in [Branch::Convex, Branch::Concave] {
            match design_with_branch(model, &prod, branch, WaterfillOptions::default()) {
                Ok(mut result) => {
                    if let Some(fault) = &config.fault {
                        fault.apply(&mut result);
                    }
                    for check in check_design(model, &result) {
                        w.add(check);
                    }
                    if branch == Branch::Convex {
                        w.add(at_most(
                            "mse_weak_majorization_violations",
                            weak_majorization_violations(
                                model,
                                &result,
                                config.rotation_draws,
                                &mut rng,
                            ) as f64,
                            0.0,
                        ));
                        w.add(lmmse_dominance(
                            model,
                            &result,
                            config.lmmse_perturbations,
                            &mut rng,
                        ));
                    }
                }
                Err(e) => w.add(InvariantCheck {
                    name: format!("design_error: {e}"),
                    value: 1.0,
                    tolerance: 0.0,
                    pass: false,
                }),
            }
        }
    }
    w.rows("design").collect()
}

/// Draws random unitary inter-hop rotations and counts the draws where
/// `λ(Θ) ≺×,w γ` fails.
fn weak_majorization_violations(
    model: &SystemModel,
    result: &DesignResult,
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    let gamma = NonnegVector::new(result.gamma.iter().map(|g| g.max(0.0)).collect()).unwrap();
    let hops = result.f_matrices.len();
    let Ok(model_m) = model
        .hops()
        .iter()
        .zip(&result.f_matrices)
        .map(|(hop, f)| compute_m(hop, f))
        .collect::<Result<Vec<_>>>()
    else {
        return draws;
    };
    let mut violations = 0;
    for _ in 0..draws {
        let q: Vec<CMatrix> = (0..hops)
            .map(|k| {
                if k + 1 == hops {
                    identity(model_m[k].nrows())
                } else {
                    haar_unitary(model_m[k].nrows(), rng)
                }
            })
            .collect();
        let ok = compute_theta(&model_m, &q).ok().and_then(|theta| {
            // round-off may push eigenvalues slightly past the bound
            let lambda: Vec<f64> = eigvals_desc(&theta)
                .iter()
                .map(|x| x.max(0.0) * (1.0 - 1e-10))
                .collect();
            weakly_multiplicatively_majorizes(&NonnegVector::new(lambda).ok()?, &gamma).ok()
        });
        if ok != Some(true) {
            violations += 1;
        }
    }
    violations
}

fn lmmse_dominance(
    model: &SystemModel,
    result: &DesignResult,
    perturbations: usize,
    rng: &mut ChaCha8Rng,
) -> InvariantCheck {
    let c = result.feedback.c();
    let Ok(base) = mse_matrix(model, &result.g_matrix, &result.p_matrices, c) else {
        return flag("lmmse_dominance", false);
    };
    let base = trace_re(&base);
    let g = &result.g_matrix;
    let scale = 1e-2 * frobenius(g) / (g.nrows() as f64).sqrt();
    let mut worst_margin = f64::INFINITY;
    for _ in 0..perturbations {
        let perturbed = g + complex_gaussian_matrix(g.nrows(), g.ncols(), rng) * c64(scale, 0.0);
        match mse_matrix(model, &perturbed, &result.p_matrices, c) {
            Ok(phi) => worst_margin = worst_margin.min(trace_re(&phi) - base),
            Err(_) => worst_margin = f64::NEG_INFINITY,
        }
    }
    InvariantCheck {
        name: "lmmse_dominance_margin".into(),
        value: -worst_margin,
        tolerance: 0.0,
        pass: worst_margin > 0.0,
    }
}

fn rotation_suite(config: &ValidationConfig) -> Vec<ValidationRow> {
    let mut w = Worst::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x30);
    let sigma_b_sq: f64 = 10.0;
    for i in 0..config.theta_draws {
        let n = 2 + i % 3;
        let u = haar_unitary(n, &mut rng);
        let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.99)).collect();
        let theta = &u * diag_real(&lambda) * u.adjoint();
        let result = construct_q0_convex(&theta, sigma_b_sq.sqrt())
            .and_then(|q0| mse_factor(&theta, &q0, sigma_b_sq));
        match result {
            Ok(l) => {
                w.add(at_most(
                    "q0_equal_diagonal_spread",
                    diagonal_spread(&l),
                    1e-8,
                ));
                let expected = lambda
                    .iter()
                    .map(|x| sigma_b_sq * (1.0 - x))
                    .product::<f64>()
                    .powf(1.0 / (2.0 * n as f64));
                let gap = (0..n)
                    .map(|j| (l[(j, j)].norm() - expected).abs() / expected)
                    .fold(0.0, f64::max);
                w.add(at_most("q0_determinant_identity", gap, 1e-8));
            }
            Err(_) => w.add(flag("q0_construction", false)),
        }
    }
    w.rows("source_rotation").collect()
}

fn waterfill_suite(config: &ValidationConfig) -> Vec<ValidationRow> {
    let mut w = Worst::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x77);
    for i in 0..config.waterfill_instances {
        let h: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..2).map(|_| rng.random_range(0.2..3.0)).collect())
            .collect();
        let budgets: Vec<f64> = (0..2).map(|_| rng.random_range(0.5..20.0)).collect();
        let weights = if i % 2 == 0 {
            vec![1.0, 1.0]
        } else {
            vec![2.0, 1.0]
        };
        let Ok(result) = waterfill(&h, &budgets, &weights, WaterfillOptions::default()) else {
            w.add(flag("waterfill_run", false));
            continue;
        };
        let (_, oracle) = brute_force_allocation(&h, &budgets, &weights);
        w.add(at_most(
            "waterfill_oracle_gap",
            result.objective - oracle,
            1e-6,
        ));
        w.add(at_most(
            "waterfill_kkt",
            kkt_residual(&h, &result.f, &weights),
            1e-6,
        ));
    }
    w.rows("waterfill").collect()
}

fn mse_suite(config: &ValidationConfig, models: &[SystemModel]) -> Vec<ValidationRow> {
    let mut w = Worst::default();
    let prod = ObjectiveSpec::prod_mse();
    for (i, model) in models.iter().take(config.mse_designs).enumerate() {
        let Ok(result) =
            design_with_branch(model, &prod, Branch::Convex, WaterfillOptions::default())
        else {
            w.add(flag("mse_design", false));
            continue;
        };
        let transceiver = Transceiver::from(&result);
        match empirical_mse(
            model,
            &transceiver,
            config.mse_error_draws,
            config.mse_symbols,
            config.seed + i as u64,
        ) {
            Ok(est) => {
                let z = est
                    .mean
                    .iter()
                    .zip(&est.stderr)
                    .zip(&result.predicted_mse)
                    .map(|((m, s), p)| (m - p).abs() / s)
                    .fold(0.0, f64::max);
                w.add(at_most("empirical_mse_z_score", z, 3.0));
            }
            Err(_) => w.add(flag("empirical_mse", false)),
        }
    }
    w.rows("mse").collect()
}

/// Runs every suite.
pub fn run_validation(config: &ValidationConfig) -> Result<ValidationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let options = RandomSystemOptions::default();
    let models: Vec<SystemModel> = (0..config.systems)
        .map(|_| random_system(&mut rng, &options))
        .collect::<Result<_>>()?;
    let mut rows = majorization_suite(config);
    rows.extend(design_suite(config, &models));
    rows.extend(rotation_suite(config));
    rows.extend(waterfill_suite(config));
    rows.extend(mse_suite(config, &models));
    Ok(ValidationReport { rows })
}
