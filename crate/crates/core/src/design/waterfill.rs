//! Iterative water-filling across the hops of the chain.
//!
//! With `x_{k,n} = f_{k,n}² h_{k,n}²` the allocation minimizes
//! `Σ_n w_n log(1 - Π_k x_{k,n} / (x_{k,n} + 1))` subject to
//! `Σ_n f_{k,n}² = P_k` for each hop. Each sweep solves the problem exactly
//! for one hop while the others are held fixed: with
//! `a_n = Π_{l≠k} x_{l,n} / (x_{l,n} + 1)` the stationarity condition is
//! `((1 - a_n) x_n + 1)(x_n + 1) = a_n w_n h_n² / μ`, solved in closed form
//! for `x_n`, and `μ` is found by bisection on the power budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stopping rule of the outer hop-by-hop loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterfillOptions {
    /// Relative objective change below which the iteration may stop.
    pub tol: f64,
    /// The iteration also waits for the KKT residual to drop below this.
    pub kkt_tol: f64,
    pub max_sweeps: usize,
}

impl Default for WaterfillOptions {
    fn default() -> Self {
        WaterfillOptions {
            tol: 1e-8,
            kkt_tol: 1e-9,
            max_sweeps: 200,
        }
    }
}

const MU_LOW: f64 = 1e-12;
const MU_HIGH: f64 = 1e12;
const POWER_TOLERANCE: f64 = 1e-10;
const MAX_BISECTIONS: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waterfill {
    /// `f_{k,n}` (amplitudes, not powers).
    pub f: Vec<Vec<f64>>,
    pub objective: f64,
    pub sweeps: usize,
    /// False when `max_sweeps` was reached before the objective settled.
    pub converged: bool,
}

/// `Σ_n w_n log(1 - γ_n)` for powers `f2[k][n]`.
pub fn allocation_objective(h: &[Vec<f64>], f2: &[Vec<f64>], weights: &[f64]) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(n, w)| {
            let gamma: f64 = h
                .iter()
                .zip(f2)
                .map(|(hk, fk)| ratio(fk[n] * hk[n] * hk[n]))
                .product();
            w * (1.0 - gamma).ln()
        })
        .sum()
}

fn ratio(x: f64) -> f64 {
    x / (x + 1.0)
}

/// Optimal `x = f² h²` of one stream given the other hops' product `a` and
/// `c = w h² / μ`. Reduces to `(c - 1)⁺` as `a → 1`.
fn stream_gain(a: f64, c: f64) -> f64 {
    if a <= 0.0 || c <= 0.0 {
        return 0.0;
    }
    let disc = (a * a + 4.0 * (1.0 - a) * a * c).sqrt();
    (2.0 * a * c / (a + disc) - 1.0).max(0.0)
}

/// Marginal objective decrease per unit of power on stream `n`, used for the
/// KKT conditions: active streams share a common value `μ`, inactive ones sit
/// at or below it.
pub fn marginal(a: f64, w: f64, h: f64, x: f64) -> f64 {
    w * h * h * a / (((1.0 - a) * x + 1.0) * (x + 1.0))
}

fn others_product(h: &[Vec<f64>], f2: &[Vec<f64>], k: usize, n: usize) -> f64 {
    (0..h.len())
        .filter(|&l| l != k)
        .map(|l| ratio(f2[l][n] * h[l][n] * h[l][n]))
        .product()
}

fn hop_powers(h: &[f64], a: &[f64], w: &[f64], mu: f64) -> Vec<f64> {
    h.iter()
        .zip(a)
        .zip(w)
        .map(|((&h, &a), &w)| {
            if h > 0.0 {
                stream_gain(a, w * h * h / mu) / (h * h)
            } else {
                0.0
            }
        })
        .collect()
}

/// Exact single-hop update with the other hops fixed.
fn update_hop(h: &[f64], a: &[f64], w: &[f64], budget: f64) -> Vec<f64> {
    let total = |mu: f64| hop_powers(h, a, w, mu).iter().sum::<f64>();
    let (mut lo, mut hi) = (MU_LOW.ln(), MU_HIGH.ln());
    let mut powers = hop_powers(h, a, w, lo.exp());
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let p = total(mid.exp());
        if p > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        powers = hop_powers(h, a, w, hi.exp());
        let err = (powers.iter().sum::<f64>() - budget).abs() / budget;
        if err <= POWER_TOLERANCE || hi - lo < 1e-15 {
            break;
        }
    }
    let sum: f64 = powers.iter().sum();
    if sum > 0.0 {
        powers.iter_mut().for_each(|p| *p *= budget / sum);
    } else {
        // every stream is blocked by a zero gain elsewhere; spread evenly
        let active = h.iter().filter(|&&x| x > 0.0).count().max(1) as f64;
        for (p, &hn) in powers.iter_mut().zip(h) {
            *p = if hn > 0.0 { budget / active } else { 0.0 };
        }
    }
    powers
}

/// Hop-by-hop water-filling. `h[k][n]` are the effective singular values of
/// hop `k`, `budgets[k]` its power, `weights` the per-stream objective
/// weights (all ones for the unweighted problem).
pub fn waterfill(
    h: &[Vec<f64>],
    budgets: &[f64],
    weights: &[f64],
    options: WaterfillOptions,
) -> Result<Waterfill> {
    let k_hops = h.len();
    let n = weights.len();
    if k_hops == 0 || budgets.len() != k_hops {
        return Err(Error::DimensionMismatch(format!(
            "{} gain rows for {} power budgets",
            k_hops,
            budgets.len()
        )));
    }
    if let Some(row) = h.iter().position(|row| row.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "hop {} has {} gains for {n} weights",
            row + 1,
            h[row].len()
        )));
    }
    if h.iter().flatten().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "gains must be finite and nonnegative".into(),
        ));
    }
    if budgets.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::InvalidParameter(
            "power budgets must be positive".into(),
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidParameter(
            "weights must be nonnegative".into(),
        ));
    }

    // The problem is not jointly convex across hops. Besides the uniform
    // start, run from power spread over the strongest `m` streams for every
    // `m < N`; streams without power in every hop stay off, so each start
    // explores one support. The best stationary point wins.
    let mut best = iterate(h, budgets, weights, options, n);
    for m in 1..n {
        let candidate = iterate(h, budgets, weights, options, m);
        if candidate.objective < best.objective - options.tol * best.objective.abs() {
            best = candidate;
        }
    }
    Ok(best)
}

fn iterate(
    h: &[Vec<f64>],
    budgets: &[f64],
    weights: &[f64],
    options: WaterfillOptions,
    support: usize,
) -> Waterfill {
    let k_hops = h.len();
    let n = weights.len();
    let mut f2: Vec<Vec<f64>> = budgets
        .iter()
        .map(|&p| {
            (0..n)
                .map(|s| if s < support { p / support as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    let mut objective = allocation_objective(h, &f2, weights);
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < options.max_sweeps {
        sweeps += 1;
        for k in 0..k_hops {
            let a: Vec<f64> = (0..n).map(|s| others_product(h, &f2, k, s)).collect();
            f2[k] = update_hop(&h[k], &a, weights, budgets[k]);
        }
        let next = allocation_objective(h, &f2, weights);
        let change = (objective - next).abs() / next.abs().max(f64::MIN_POSITIVE);
        objective = next;
        if change < options.tol && kkt_residual_of_powers(h, &f2, weights) < options.kkt_tol {
            converged = true;
            break;
        }
    }
    Waterfill {
        f: f2
            .iter()
            .map(|row| row.iter().map(|p| p.sqrt()).collect())
            .collect(),
        objective,
        sweeps,
        converged,
    }
}

/// Largest relative KKT violation over all hops: the spread of marginal
/// values among active streams, and the excess of any inactive stream's
/// marginal over the common level.
pub fn kkt_residual(h: &[Vec<f64>], f: &[Vec<f64>], weights: &[f64]) -> f64 {
    let f2: Vec<Vec<f64>> = f
        .iter()
        .map(|row| row.iter().map(|x| x * x).collect())
        .collect();
    kkt_residual_of_powers(h, &f2, weights)
}

fn kkt_residual_of_powers(h: &[Vec<f64>], f2: &[Vec<f64>], weights: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..h.len() {
        let mut active = Vec::new();
        let mut inactive = Vec::new();
        for n in 0..weights.len() {
            if h[k][n] <= 0.0 {
                continue;
            }
            let a = others_product(h, f2, k, n);
            let x = f2[k][n] * h[k][n] * h[k][n];
            let m = marginal(a, weights[n], h[k][n], x);
            if f2[k][n] > 0.0 {
                active.push(m);
            } else {
                inactive.push(m);
            }
        }
        let Some(max) = active.iter().copied().reduce(f64::max) else {
            continue;
        };
        let min = active.iter().copied().fold(f64::INFINITY, f64::min);
        let level = 0.5 * (max + min);
        worst = worst.max((max - min) / level);
        for m in inactive {
            worst = worst.max((m - level) / level);
        }
    }
    worst
}
