//! Multiplicative majorization and the catalogue of MSE objectives.
//!
//! For nonnegative vectors `v` and `u`, `v` is multiplicatively majorized by
//! `u` (`v ≺× u`) when, after sorting both in decreasing order, every proper
//! prefix product of `v` is at most the matching prefix product of `u` and
//! the full products agree. Dropping the equality on the full product gives
//! the weak order `≺×,w`.
//!
//! A function is M-Schur-convex when it preserves `≺×` and M-Schur-concave
//! when it reverses it. [`classify_objective`] decides this numerically by
//! sampling the monotonicity criterion: for `z` sorted decreasing and a pair
//! `(z_k, z_{k+1})`, the function must be decreasing (convex) or increasing
//! (concave) in `e` along `(…, z_k / e, z_{k+1} · e, …)` for
//! `1 ≤ e ≤ sqrt(z_k / z_{k+1})`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on log-domain prefix product comparisons.
pub const LOG_TOLERANCE: f64 = 1e-12;

/// Relative monotonicity violations below this are attributed to round-off.
pub const MONOTONICITY_TOLERANCE: f64 = 1e-10;

const GRID_POINTS: usize = 16;
const ZERO_TAIL_PROBABILITY: f64 = 0.1;
// Upper end of the e grid when z_{k+1} = 0 and the admissible region is unbounded.
const UNBOUNDED_E_MAX: f64 = 10.0;

/// A vector with nonnegative entries, stored in the caller's order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonnegVector(Vec<f64>);

impl NonnegVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(x) = values.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "entries must be finite and nonnegative, got {x}"
            )));
        }
        Ok(NonnegVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sorted_desc(&self) -> Vec<f64> {
        let mut v = self.0.clone();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for NonnegVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        NonnegVector::new(values)
    }
}

/// Log prefix products of the decreasingly sorted vector; `-inf` once a zero
/// has been absorbed.
fn log_prefix_products(v: &NonnegVector) -> Vec<f64> {
    let mut acc = 0.0;
    v.sorted_desc()
        .into_iter()
        .map(|x| {
            acc += if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
            acc
        })
        .collect()
}

fn prefix_le(lv: f64, lu: f64) -> bool {
    lv == f64::NEG_INFINITY || lv <= lu + LOG_TOLERANCE
}

fn check_lengths(v: &NonnegVector, u: &NonnegVector) -> Result<()> {
    if v.len() != u.len() {
        return Err(Error::DimensionMismatch(format!(
            "majorization of vectors with lengths {} and {}",
            v.len(),
            u.len()
        )));
    }
    Ok(())
}

/// `v ≺× u`.
pub fn multiplicatively_majorizes(v: &NonnegVector, u: &NonnegVector) -> Result<bool> {
    check_lengths(v, u)?;
    let n = v.len();
    if n == 0 {
        return Ok(true);
    }
    let (lv, lu) = (log_prefix_products(v), log_prefix_products(u));
    let prefixes = (0..n - 1).all(|k| prefix_le(lv[k], lu[k]));
    let (tv, tu) = (lv[n - 1], lu[n - 1]);
    let totals = if tv == f64::NEG_INFINITY || tu == f64::NEG_INFINITY {
        tv == tu
    } else {
        (tv - tu).abs() <= LOG_TOLERANCE
    };
    Ok(prefixes && totals)
}

/// `v ≺×,w u`: every prefix product, including the full one, is dominated.
pub fn weakly_multiplicatively_majorizes(v: &NonnegVector, u: &NonnegVector) -> Result<bool> {
    check_lengths(v, u)?;
    let (lv, lu) = (log_prefix_products(v), log_prefix_products(u));
    Ok(lv.iter().zip(&lu).all(|(&a, &b)| prefix_le(a, b)))
}

/// Outcome of the numerical monotonicity classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    MSchurConvex,
    MSchurConcave,
    Both,
    Neither,
    Inconclusive,
}

/// Draws `z` from `{z_1 ≥ … ≥ z_N ≥ 0}`.
fn sample_domain_point(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut z: Vec<f64> = (0..dim)
        .map(|_| rng.random_range(-3.0..3.0f64).exp())
        .collect();
    z.sort_by(|a, b| b.total_cmp(a));
    if rng.random_bool(ZERO_TAIL_PROBABILITY) {
        let zeros = rng.random_range(1..dim);
        for x in z.iter_mut().skip(dim - zeros) {
            *x = 0.0;
        }
    }
    z
}

/// Upper end of the admissible `e` interval for the pair `(k, k+1)`, or
/// `None` when the interval is degenerate.
fn admissible_e_max(z: &[f64], k: usize) -> Option<f64> {
    let (hi, lo) = (z[k], z[k + 1]);
    if hi <= 0.0 {
        return None;
    }
    let e_max = if lo > 0.0 {
        (hi / lo).sqrt()
    } else {
        UNBOUNDED_E_MAX
    };
    (e_max > 1.0 + 1e-12).then_some(e_max)
}

fn perturbed(z: &[f64], k: usize, e: f64) -> Vec<f64> {
    let mut p = z.to_vec();
    p[k] = z[k] / e;
    p[k + 1] = z[k + 1] * e;
    p
}

/// Samples the monotonicity criterion to classify `f` on vectors of length
/// `dim`. Deterministic in `(seed, trials)`.
pub fn classify_objective<F>(f: F, dim: usize, trials: usize, seed: u64) -> Verdict
where
    F: Fn(&[f64]) -> f64,
{
    if dim < 2 || trials == 0 {
        return Verdict::Inconclusive;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut saw_decrease, mut saw_increase, mut informative) = (false, false, false);
    for _ in 0..trials {
        let z = sample_domain_point(dim, &mut rng);
        let k = rng.random_range(0..dim - 1);
        let Some(e_max) = admissible_e_max(&z, k) else {
            continue;
        };
        informative = true;
        let values: Vec<f64> = (0..GRID_POINTS)
            .map(|j| {
                let e = e_max.powf(j as f64 / (GRID_POINTS - 1) as f64);
                f(&perturbed(&z, k, e))
            })
            .collect();
        for w in values.windows(2) {
            let scale = w[0].abs().max(w[1].abs()).max(f64::MIN_POSITIVE);
            let step = w[1] - w[0];
            if step < -MONOTONICITY_TOLERANCE * scale {
                saw_decrease = true;
            } else if step > MONOTONICITY_TOLERANCE * scale {
                saw_increase = true;
            }
        }
    }
    match (informative, saw_decrease, saw_increase) {
        (false, _, _) => Verdict::Inconclusive,
        (true, true, true) => Verdict::Neither,
        (true, true, false) => Verdict::MSchurConvex,
        (true, false, true) => Verdict::MSchurConcave,
        (true, false, false) => Verdict::Both,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    SumMse,
    ProdMse,
    MaxMse,
    WeightedGeoMse,
}

/// Declared M-Schur class of an objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    MSchurConvex,
    MSchurConcave,
    Both,
}

/// Which optimal-rotation branch the design follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// Equal per-stream MSEs, nonlinear precoding.
    Convex,
    /// Diagonal Cholesky factor, linear precoding.
    Concave,
}

/// One of the MSE objectives together with its declared classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    kind: ObjectiveKind,
    weights: Option<Vec<f64>>,
    classification: Classification,
}

impl ObjectiveSpec {
    pub fn sum_mse() -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::SumMse,
            weights: None,
            classification: Classification::MSchurConvex,
        }
    }

    pub fn max_mse() -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::MaxMse,
            weights: None,
            classification: Classification::MSchurConvex,
        }
    }

    /// Product of the MSEs (equal-weight geometric mean).
    pub fn prod_mse() -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::ProdMse,
            weights: None,
            classification: Classification::Both,
        }
    }

    /// `Π mse_n^{w_n}` with `w_1 ≥ … ≥ w_N ≥ 0`. The classification is the
    /// caller's declaration.
    pub fn weighted_geo_mse(weights: Vec<f64>, classification: Classification) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if weights.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter(
                "weights must be nonincreasing".into(),
            ));
        }
        Ok(ObjectiveSpec {
            kind: ObjectiveKind::WeightedGeoMse,
            weights: Some(weights),
            classification,
        })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn classification(&self) -> Classification {
        self.classification
    }

    /// The branch used when the caller does not choose one. Objectives that
    /// are both convex and concave default to the nonlinear branch.
    pub fn default_branch(&self) -> Branch {
        match self.classification {
            Classification::MSchurConcave => Branch::Concave,
            Classification::MSchurConvex | Classification::Both => Branch::Convex,
        }
    }

    pub fn supports(&self, branch: Branch) -> bool {
        matches!(
            (self.classification, branch),
            (Classification::Both, _)
                | (Classification::MSchurConvex, Branch::Convex)
                | (Classification::MSchurConcave, Branch::Concave)
        )
    }

    /// Per-stream weights for the power allocation objective of `branch`.
    /// The convex branch always minimizes `Σ log(1 - γ_n)` unweighted.
    pub fn allocation_weights(&self, branch: Branch, n: usize) -> Result<Vec<f64>> {
        match (branch, &self.weights) {
            (Branch::Concave, Some(w)) => {
                if w.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "{} objective weights for {n} streams",
                        w.len()
                    )));
                }
                Ok(w.clone())
            }
            _ => Ok(vec![1.0; n]),
        }
    }

    pub fn evaluate(&self, mse: &NonnegVector) -> Result<f64> {
        let x = mse.as_slice();
        Ok(match self.kind {
            ObjectiveKind::SumMse => x.iter().sum(),
            ObjectiveKind::ProdMse => x.iter().product(),
            ObjectiveKind::MaxMse => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ObjectiveKind::WeightedGeoMse => {
                let w = self.weights.as_deref().unwrap_or(&[]);
                if w.len() != x.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} weights for an MSE vector of length {}",
                        w.len(),
                        x.len()
                    )));
                }
                x.iter().zip(w).map(|(m, w)| m.powf(*w)).product()
            }
        })
    }
}

/// Free-function form of [`ObjectiveSpec::evaluate`].
pub fn evaluate_objective(spec: &ObjectiveSpec, mse: &NonnegVector) -> Result<f64> {
    spec.evaluate(mse)
}
