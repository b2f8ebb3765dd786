//! Monte Carlo link-level simulation of the designed relay chain.
//!
//! Every trial draws fresh estimated channels and one estimation-error
//! realization per hop, designs the transceiver for each scheme, and pushes
//! QAM symbol vectors through the true chain with fresh noise per vector.
//! Random streams are derived from `(master_seed, snr index, trial)` only, so
//! all schemes of a trial see the same channels, errors, bits and noise, and
//! the results do not depend on thread count or execution order.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_error, sample_estimated_channel, CorrelationSpec, HopChannel};
use crate::design::{design_with_branch, DesignResult, SystemModel, WaterfillOptions};
use crate::error::{Error, Result};
use crate::linalg::{complex_gaussian, CMatrix, CVector};
use crate::majorization::{Branch, ObjectiveSpec};
use crate::thp::{detect, thp_encode, QamConstellation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    /// THP with the error-aware design.
    RobustThp,
    /// THP designed as if the estimates were exact.
    NonRobustThp,
    /// Error-aware linear precoding (no feedback, no receive modulo).
    RobustLinear,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [
        Scheme::RobustThp,
        Scheme::NonRobustThp,
        Scheme::RobustLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::RobustThp => "robust_thp",
            Scheme::NonRobustThp => "nonrobust_thp",
            Scheme::RobustLinear => "robust_linear",
        }
    }

    pub fn from_name(name: &str) -> Option<Scheme> {
        Scheme::ALL.into_iter().find(|s| s.name() == name)
    }

    fn branch(self) -> Branch {
        match self {
            Scheme::RobustThp | Scheme::NonRobustThp => Branch::Convex,
            Scheme::RobustLinear => Branch::Concave,
        }
    }

    fn uses_modulo(self) -> bool {
        self.branch() == Branch::Convex
    }
}

/// Shape and statistics of one hop, without a channel draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopTemplate {
    pub n_t: usize,
    pub n_r: usize,
    pub correlation: CorrelationSpec,
    /// `P_k / σ_k²` in dB when this hop is not the swept one.
    pub snr_db: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub hops: Vec<HopTemplate>,
    pub n_streams: usize,
    pub modulation: u32,
    pub objective: ObjectiveSpec,
    /// 0-based index of the hop whose SNR follows `snr_grid`.
    pub swept_hop: usize,
    pub snr_grid: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub n_trials: usize,
    pub n_symbols: usize,
    pub master_seed: u64,
}

/// Fraction of failed trials above which a sweep is aborted.
pub const MAX_FAILURE_RATE: f64 = 0.01;

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.hops.is_empty() {
            return bad("at least one hop is required".into());
        }
        if self.n_trials == 0 || self.n_symbols == 0 {
            return bad("trial and symbol counts must be positive".into());
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        if self.snr_grid.is_empty() || self.snr_grid.iter().any(|s| !s.is_finite()) {
            return bad("the SNR grid must be nonempty and finite".into());
        }
        if self.swept_hop >= self.hops.len() {
            return bad(format!("swept hop {} does not exist", self.swept_hop + 1));
        }
        for scheme in &self.schemes {
            if !self.objective.supports(scheme.branch()) {
                return bad(format!(
                    "scheme {} needs the {:?} branch, which the objective does not support",
                    scheme.name(),
                    scheme.branch()
                ));
            }
        }
        for (k, hop) in self.hops.iter().enumerate() {
            if hop.n_t < self.n_streams || hop.n_r < self.n_streams {
                return Err(Error::DimensionMismatch(format!(
                    "hop {} has {}x{} antennas for {} streams",
                    k + 1,
                    hop.n_r,
                    hop.n_t,
                    self.n_streams
                )));
            }
            if hop.correlation.rho_t() > 0.0 && hop.correlation.rho_r() > 0.0 {
                return Err(Error::UnsupportedCovariance { hop: k + 1 });
            }
            if !(hop.power > 0.0) || !hop.snr_db.is_finite() {
                return bad(format!("hop {} needs positive power and finite SNR", k + 1));
            }
        }
        QamConstellation::new(self.modulation)?;
        Ok(())
    }

    fn noise_variances(&self, snr_index: usize) -> Vec<f64> {
        self.hops
            .iter()
            .enumerate()
            .map(|(k, hop)| {
                let snr = if k == self.swept_hop {
                    self.snr_grid[snr_index]
                } else {
                    hop.snr_db
                };
                hop.power / 10f64.powf(snr / 10.0)
            })
            .collect()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(master, snr index, trial, purpose)`.
pub fn trial_rng(master: u64, snr_index: usize, trial: usize, stream: u64) -> ChaCha8Rng {
    let seed = [snr_index as u64, trial as u64]
        .iter()
        .fold(splitmix(master), |acc, &x| splitmix(acc ^ x));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const CHANNEL_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;

/// One drawn channel set: estimates with their statistics, and the truth.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    pub model: SystemModel,
    pub true_channels: Vec<CMatrix>,
}

/// Draws `H̄_k` for every hop, then `ΔH_k` for every hop.
pub fn draw_channels(
    config: &SweepConfig,
    snr_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ChannelDraw> {
    let noise = config.noise_variances(snr_index);
    let hops: Vec<HopChannel> = config
        .hops
        .iter()
        .zip(&noise)
        .map(|(t, &s2)| {
            let h_bar = sample_estimated_channel(&t.correlation, t.n_r, t.n_t, rng);
            HopChannel::from_spec(&t.correlation, h_bar, s2, t.power)
        })
        .collect::<Result<_>>()?;
    let true_channels = hops
        .iter()
        .map(|h| h.h_bar() + sample_error(h, rng))
        .collect();
    let model = SystemModel::new(hops, config.n_streams, config.modulation)?;
    Ok(ChannelDraw {
        model,
        true_channels,
    })
}

/// Designs the transceiver a scheme would use on `model`.
pub fn design_for(
    model: &SystemModel,
    objective: &ObjectiveSpec,
    scheme: Scheme,
) -> Result<DesignResult> {
    let designed_on = match scheme {
        Scheme::NonRobustThp => model.without_error(),
        Scheme::RobustThp | Scheme::RobustLinear => model.clone(),
    };
    design_with_branch(
        &designed_on,
        objective,
        scheme.branch(),
        WaterfillOptions::default(),
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub bit_errors: u64,
    pub bits: u64,
    pub symbol_errors: u64,
    pub symbols: u64,
    /// Mean of `|[G y - C b]_n|²` per stream over the trial's vectors.
    pub stream_mse: Vec<f64>,
}

/// Pushes `n_symbols` vectors through the true chain.
fn transmit(
    draw: &ChannelDraw,
    design: &DesignResult,
    scheme: Scheme,
    n_symbols: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrialOutcome> {
    let model = &draw.model;
    let m = model.modulation();
    let qam = QamConstellation::new(m)?;
    let n = model.n_streams();
    let k_bits = qam.bits_per_symbol();
    let effective: Vec<CMatrix> = draw
        .true_channels
        .iter()
        .zip(&design.p_matrices)
        .map(|(h, p)| h * p)
        .collect();
    let noise_std: Vec<f64> = model.hops().iter().map(|h| h.sigma_n_sq().sqrt()).collect();
    let feedback = &design.feedback;

    let mut out = TrialOutcome {
        stream_mse: vec![0.0; n],
        ..Default::default()
    };
    for _ in 0..n_symbols {
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let a = CVector::from_iterator(n, labels.iter().map(|&l| qam.point(l)));
        let b = thp_encode(&a, feedback, m)?;
        let mut x = b.clone();
        for (e, &s) in effective.iter().zip(&noise_std) {
            let noise = CVector::from_fn(e.nrows(), |_, _| complex_gaussian(rng) * s);
            x = e * x + noise;
        }
        let y = &design.g_matrix * x;
        let target = feedback.c() * &b;
        let decided = if scheme.uses_modulo() {
            detect(&y, m)?
        } else {
            y.map(|z| qam.slice(z))
        };
        for i in 0..n {
            out.stream_mse[i] += (y[i] - target[i]).norm_sqr();
            let got = qam.label(decided[i]);
            if got != labels[i] {
                out.symbol_errors += 1;
                out.bit_errors += u64::from((got ^ labels[i]).count_ones());
            }
        }
    }
    out.stream_mse
        .iter_mut()
        .for_each(|v| *v /= n_symbols as f64);
    out.symbols = (n * n_symbols) as u64;
    out.bits = out.symbols * k_bits as u64;
    Ok(out)
}

/// One trial of one scheme at one SNR point.
pub fn run_trial(
    config: &SweepConfig,
    scheme: Scheme,
    snr_index: usize,
    trial: usize,
) -> Result<TrialOutcome> {
    let mut channel_rng = trial_rng(config.master_seed, snr_index, trial, CHANNEL_STREAM);
    let draw = draw_channels(config, snr_index, &mut channel_rng)?;
    let design = design_for(&draw.model, &config.objective, scheme)?;
    let mut data_rng = trial_rng(config.master_seed, snr_index, trial, DATA_STREAM);
    transmit(&draw, &design, scheme, config.n_symbols, &mut data_rng)
}

/// Aggregated statistics of one `(scheme, snr)` point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub trials: usize,
    pub failed_trials: usize,
    pub bit_errors: u64,
    pub bits: u64,
    pub symbol_errors: u64,
    pub symbols: u64,
    pub ber: f64,
    /// Standard error of the BER across trials.
    pub ber_stderr: f64,
    pub ser: f64,
    /// Bit errors of each successful trial, in trial order.
    pub trial_bit_errors: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub points: Vec<PointResult>,
    pub wall_time_s: f64,
}

impl SweepResult {
    pub fn point(&self, scheme: Scheme, snr_index: usize) -> Option<&PointResult> {
        let snr = *self.config.snr_grid.get(snr_index)?;
        self.points
            .iter()
            .find(|p| p.scheme == scheme && p.snr_db == snr)
    }
}

fn aggregate(
    scheme: Scheme,
    snr_db: f64,
    outcomes: Vec<Result<TrialOutcome>>,
) -> (PointResult, Option<Error>) {
    let trials = outcomes.len();
    let mut first_error = None;
    let mut ok = Vec::with_capacity(trials);
    for o in outcomes {
        match o {
            Ok(t) => ok.push(t),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let sum = |f: fn(&TrialOutcome) -> u64| ok.iter().map(f).sum::<u64>();
    let (bit_errors, bits) = (sum(|t| t.bit_errors), sum(|t| t.bits));
    let (symbol_errors, symbols) = (sum(|t| t.symbol_errors), sum(|t| t.symbols));
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_trial: Vec<f64> = ok.iter().map(|t| ratio(t.bit_errors, t.bits)).collect();
    let ber = ratio(bit_errors, bits);
    let ber_stderr = if per_trial.len() > 1 {
        let mean = per_trial.iter().sum::<f64>() / per_trial.len() as f64;
        let var = per_trial.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
            / (per_trial.len() - 1) as f64;
        (var / per_trial.len() as f64).sqrt()
    } else {
        0.0
    };
    let point = PointResult {
        scheme,
        snr_db,
        trials: ok.len(),
        failed_trials: trials - ok.len(),
        bit_errors,
        bits,
        symbol_errors,
        symbols,
        ber,
        ber_stderr,
        ser: ratio(symbol_errors, symbols),
        trial_bit_errors: ok.iter().map(|t| t.bit_errors).collect(),
    };
    (point, first_error)
}

/// Runs every trial of every `(scheme, snr)` point in parallel.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let start = Instant::now();
    let mut points = Vec::new();
    for (snr_index, &snr_db) in config.snr_grid.iter().enumerate() {
        // all schemes of a trial share the channel draw, so the trial is the
        // unit of parallel work
        let per_trial: Vec<Vec<Result<TrialOutcome>>> = (0..config.n_trials)
            .into_par_iter()
            .map(|trial| trial_all_schemes(config, snr_index, trial))
            .collect();
        for (s, &scheme) in config.schemes.iter().enumerate() {
            let outcomes = per_trial.iter().map(|row| row[s].clone()).collect();
            let (point, error) = aggregate(scheme, snr_db, outcomes);
            if point.failed_trials as f64 > MAX_FAILURE_RATE * config.n_trials as f64 {
                return Err(Error::TrialFailures {
                    failed: point.failed_trials,
                    total: config.n_trials,
                    first: error.map(|e| e.to_string()).unwrap_or_default(),
                });
            }
            points.push(point);
        }
    }
    points.sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.snr_db.total_cmp(&b.snr_db)));
    Ok(SweepResult {
        config: config.clone(),
        points,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn trial_all_schemes(
    config: &SweepConfig,
    snr_index: usize,
    trial: usize,
) -> Vec<Result<TrialOutcome>> {
    let mut channel_rng = trial_rng(config.master_seed, snr_index, trial, CHANNEL_STREAM);
    let draw = match draw_channels(config, snr_index, &mut channel_rng) {
        Ok(d) => d,
        Err(e) => return config.schemes.iter().map(|_| Err(e.clone())).collect(),
    };
    config
        .schemes
        .iter()
        .map(|&scheme| {
            let design = design_for(&draw.model, &config.objective, scheme)?;
            let mut data_rng = trial_rng(config.master_seed, snr_index, trial, DATA_STREAM);
            transmit(&draw, &design, scheme, config.n_symbols, &mut data_rng)
        })
        .collect()
}

/// A fixed transceiver: precoders, feedback and equalizer.
#[derive(Debug, Clone)]
pub struct Transceiver {
    pub p_matrices: Vec<CMatrix>,
    pub c_matrix: CMatrix,
    pub g_matrix: CMatrix,
}

impl From<&DesignResult> for Transceiver {
    fn from(d: &DesignResult) -> Self {
        Transceiver {
            p_matrices: d.p_matrices.clone(),
            c_matrix: d.feedback.c().clone(),
            g_matrix: d.g_matrix.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseEstimate {
    pub mean: Vec<f64>,
    /// Standard error across error draws.
    pub stderr: Vec<f64>,
}

/// Empirical `E|[G y - C b]_n|²` with `b` i.i.d. uniform QAM, averaged over
/// `error_draws` realizations of the estimation errors of `model` and
/// `n_symbols` vectors each.
pub fn empirical_mse(
    model: &SystemModel,
    transceiver: &Transceiver,
    error_draws: usize,
    n_symbols: usize,
    seed: u64,
) -> Result<MseEstimate> {
    if error_draws < 2 || n_symbols == 0 {
        return Err(Error::InvalidParameter(
            "need at least two error draws and one symbol".into(),
        ));
    }
    let m = model.modulation();
    let qam = QamConstellation::new(m)?;
    let n = model.n_streams();
    let draw_means: Vec<Vec<f64>> = (0..error_draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = trial_rng(seed, 0, d, CHANNEL_STREAM);
            let effective: Vec<CMatrix> = model
                .hops()
                .iter()
                .zip(&transceiver.p_matrices)
                .map(|(hop, p)| (hop.h_bar() + sample_error(hop, &mut rng)) * p)
                .collect();
            let noise_std: Vec<f64> = model.hops().iter().map(|h| h.sigma_n_sq().sqrt()).collect();
            let mut acc = vec![0.0; n];
            for _ in 0..n_symbols {
                let b = CVector::from_fn(n, |_, _| qam.point(rng.random_range(0..m)));
                let mut x = b.clone();
                for (e, &s) in effective.iter().zip(&noise_std) {
                    x = e * x + CVector::from_fn(e.nrows(), |_, _| complex_gaussian(&mut rng) * s);
                }
                let err = &transceiver.g_matrix * x - &transceiver.c_matrix * &b;
                for (a, z) in acc.iter_mut().zip(err.iter()) {
                    *a += z.norm_sqr();
                }
            }
            acc.iter().map(|a| a / n_symbols as f64).collect()
        })
        .collect();
    let draws = error_draws as f64;
    let mean: Vec<f64> = (0..n)
        .map(|i| draw_means.iter().map(|d| d[i]).sum::<f64>() / draws)
        .collect();
    let stderr = (0..n)
        .map(|i| {
            let var = draw_means
                .iter()
                .map(|d| (d[i] - mean[i]).powi(2))
                .sum::<f64>()
                / (draws - 1.0);
            (var / draws).sqrt()
        })
        .collect();
    Ok(MseEstimate { mean, stderr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::mse_matrix;
    use crate::linalg::c64;
    use crate::thp::PrecoderFeedback;

    fn fig2_config(trials: usize, symbols: usize) -> SweepConfig {
        let corr = CorrelationSpec::new(0.0, 0.4, 0.001).unwrap();
        let hop = HopTemplate {
            n_t: 4,
            n_r: 4,
            correlation: corr,
            snr_db: 30.0,
            power: 1.0,
        };
        SweepConfig {
            hops: vec![hop.clone(), hop],
            n_streams: 4,
            modulation: 16,
            objective: ObjectiveSpec::prod_mse(),
            swept_hop: 0,
            snr_grid: vec![10.0, 20.0],
            schemes: Scheme::ALL.to_vec(),
            n_trials: trials,
            n_symbols: symbols,
            master_seed: 99,
        }
    }

    #[test]
    fn validation() {
        let mut c = fig2_config(2, 2);
        assert!(c.validate().is_ok());
        c.schemes.clear();
        assert!(c.validate().is_err());
        let mut c = fig2_config(0, 2);
        assert!(c.validate().is_err());
        c = fig2_config(1, 1);
        c.objective = ObjectiveSpec::sum_mse();
        assert!(c.validate().is_err(), "sum-MSE has no linear branch");
        c = fig2_config(1, 1);
        c.hops[1].correlation = CorrelationSpec::new(0.5, 0.4, 0.001).unwrap();
        assert_eq!(
            c.validate().unwrap_err(),
            Error::UnsupportedCovariance { hop: 2 }
        );
        c = fig2_config(1, 1);
        c.n_streams = 5;
        assert!(matches!(
            c.validate().unwrap_err(),
            Error::DimensionMismatch(_)
        ));
    }

    #[test]
    fn sweep_is_deterministic_and_conserves_counts() {
        let config = fig2_config(6, 50);
        let a = run_sweep(&config).unwrap();
        let b = run_sweep(&config).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.points.len(), 6);
        for p in &a.points {
            assert_eq!(p.bits, (6 * 50 * 4 * 4) as u64);
            assert_eq!(p.bit_errors, p.trial_bit_errors.iter().sum::<u64>());
            assert!(p.ber >= 0.0 && p.ber <= 1.0);
            assert_eq!(p.ber, p.bit_errors as f64 / p.bits as f64);
        }
        let single = run_trial(&config, Scheme::RobustThp, 1, 3).unwrap();
        let point = a.point(Scheme::RobustThp, 1).unwrap();
        assert_eq!(point.trial_bit_errors[3], single.bit_errors);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let config = fig2_config(4, 20);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let a = one.install(|| run_sweep(&config).unwrap());
        let b = run_sweep(&config).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn clean_channel_has_no_errors() {
        let mut config = fig2_config(3, 200);
        for hop in &mut config.hops {
            hop.correlation = CorrelationSpec::new(0.0, 0.4, 1e-12).unwrap();
            hop.snr_db = 120.0;
        }
        config.snr_grid = vec![120.0];
        let result = run_sweep(&config).unwrap();
        for p in &result.points {
            assert_eq!(p.bit_errors, 0, "{:?}", p.scheme);
        }
    }

    #[test]
    fn linear_scheme_has_no_feedback() {
        let config = fig2_config(1, 1);
        let mut rng = trial_rng(1, 0, 0, CHANNEL_STREAM);
        let draw = draw_channels(&config, 0, &mut rng).unwrap();
        let d = design_for(&draw.model, &config.objective, Scheme::RobustLinear).unwrap();
        assert!(d.feedback.is_linear());
        let d = design_for(&draw.model, &config.objective, Scheme::RobustThp).unwrap();
        assert!(!d.feedback.is_linear());
    }

    #[test]
    fn empirical_mse_matches_analytic_for_fixed_transceiver() {
        let config = fig2_config(1, 1);
        let mut rng = trial_rng(5, 0, 0, CHANNEL_STREAM);
        let draw = draw_channels(&config, 0, &mut rng).unwrap();
        // an arbitrary, non-designed transceiver
        let p: Vec<CMatrix> = (0..2)
            .map(|_| crate::linalg::complex_gaussian_matrix(4, 4, &mut rng) * c64(0.1, 0.0))
            .collect();
        let c = PrecoderFeedback::from_c(&crate::linalg::complex_gaussian_matrix(4, 4, &mut rng))
            .unwrap();
        let g = crate::linalg::complex_gaussian_matrix(4, 4, &mut rng);
        let t = Transceiver {
            p_matrices: p.clone(),
            c_matrix: c.c().clone(),
            g_matrix: g.clone(),
        };
        let est = empirical_mse(&draw.model, &t, 200, 200, 8).unwrap();
        let phi = mse_matrix(&draw.model, &g, &p, c.c()).unwrap();
        for i in 0..4 {
            let z = (est.mean[i] - phi[(i, i)].re) / est.stderr[i];
            assert!(
                z.abs() < 4.0,
                "stream {i}: {} vs {} (z={z})",
                est.mean[i],
                phi[(i, i)].re
            );
        }
    }
}
