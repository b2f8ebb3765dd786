//! Square QAM, the THP modulo operator, source precoding and detection.
//!
//! With feedback `B` (strictly lower triangular) and `C = B + I`, the source
//! computes `b_k = mod(a_k - Σ_{l<k} B_{k,l} b_l)`, which means
//! `C b = a + d` for some `d` on the lattice `2√M (Z + iZ)`. A receiver that
//! recovers `C b` removes `d` with the same modulo and slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, CMatrix, CVector, C64};

/// `2(M - 1) / 3`, the mean energy of square M-QAM on the odd-integer grid.
pub fn sigma_b_sq(m: u32) -> f64 {
    2.0 * (m as f64 - 1.0) / 3.0
}

/// Folds `x` into the square `[-√M, √M) x [-√M, √M)`.
pub fn modulo(x: C64, m: u32) -> C64 {
    let period = 2.0 * (m as f64).sqrt();
    let fold = |v: f64| v - period * (v / period + 0.5).floor();
    c64(fold(x.re), fold(x.im))
}

/// Square M-QAM with amplitudes `{±1, ±3, …, ±(√M - 1)}` per rail and a
/// reflected Gray code on each rail. The in-phase bits are the high bits of
/// a symbol label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QamConstellation {
    m: u32,
    side: u32,
    bits_per_rail: u32,
}

fn gray(i: u32) -> u32 {
    i ^ (i >> 1)
}

fn gray_inverse(mut g: u32) -> u32 {
    let mut i = g;
    while g > 0 {
        g >>= 1;
        i ^= g;
    }
    i
}

impl QamConstellation {
    /// `m` must be a power of four, at least 4.
    pub fn new(m: u32) -> Result<Self> {
        if m < 4 || !m.is_power_of_two() || m.trailing_zeros() % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "modulation order must be a power of four, got {m}"
            )));
        }
        let bits_per_rail = m.trailing_zeros() / 2;
        Ok(QamConstellation {
            m,
            side: 1 << bits_per_rail,
            bits_per_rail,
        })
    }

    pub fn order(&self) -> u32 {
        self.m
    }

    pub fn bits_per_symbol(&self) -> usize {
        2 * self.bits_per_rail as usize
    }

    pub fn sigma_b_sq(&self) -> f64 {
        sigma_b_sq(self.m)
    }

    fn amplitude(&self, rail_index: u32) -> f64 {
        2.0 * rail_index as f64 - (self.side as f64 - 1.0)
    }

    /// Nearest rail index, ties toward the smaller amplitude, clamped to the
    /// outermost points.
    fn rail_index(&self, v: f64) -> u32 {
        let t = (v + self.side as f64 - 1.0) / 2.0;
        let idx = (t - 0.5).ceil();
        idx.clamp(0.0, (self.side - 1) as f64) as u32
    }

    /// Symbol with Gray label `label`.
    pub fn point(&self, label: u32) -> C64 {
        let mask = self.side - 1;
        let i = gray_inverse(label >> self.bits_per_rail);
        let q = gray_inverse(label & mask);
        c64(self.amplitude(i), self.amplitude(q))
    }

    /// Gray label of the constellation point nearest to `z`.
    pub fn label(&self, z: C64) -> u32 {
        (gray(self.rail_index(z.re)) << self.bits_per_rail) | gray(self.rail_index(z.im))
    }

    /// All points, indexed by label.
    pub fn points(&self) -> Vec<C64> {
        (0..self.m).map(|l| self.point(l)).collect()
    }

    /// Nearest constellation point.
    pub fn slice(&self, z: C64) -> C64 {
        c64(
            self.amplitude(self.rail_index(z.re)),
            self.amplitude(self.rail_index(z.im)),
        )
    }

    /// Maps bits (most significant first within each symbol) to symbols.
    pub fn modulate(&self, bits: &[bool]) -> Result<Vec<C64>> {
        let k = self.bits_per_symbol();
        if bits.len() % k != 0 {
            return Err(Error::InvalidParameter(format!(
                "bit count {} is not a multiple of {k}",
                bits.len()
            )));
        }
        Ok(bits
            .chunks(k)
            .map(|chunk| self.point(chunk.iter().fold(0, |acc, &b| (acc << 1) | b as u32)))
            .collect())
    }

    /// Hard-decision bits of the nearest points.
    pub fn demodulate(&self, symbols: &[C64]) -> Vec<bool> {
        let k = self.bits_per_symbol();
        symbols
            .iter()
            .flat_map(|&z| {
                let label = self.label(z);
                (0..k).rev().map(move |j| (label >> j) & 1 == 1)
            })
            .collect()
    }
}

/// Modulates and demodulates `bits` without a channel.
pub fn bits_roundtrip(bits: &[bool], m: u32) -> Result<Vec<bool>> {
    let qam = QamConstellation::new(m)?;
    Ok(qam.demodulate(&qam.modulate(bits)?))
}

/// THP feedback pair with `C = B + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderFeedback {
    b: CMatrix,
    c: CMatrix,
}

impl PrecoderFeedback {
    /// No interference pre-cancellation.
    pub fn identity(n: usize) -> Self {
        PrecoderFeedback {
            b: CMatrix::zeros(n, n),
            c: CMatrix::identity(n, n),
        }
    }

    /// Builds the pair from a lower triangular `c`; the diagonal is forced to
    /// one and the upper triangle to zero, so `C - B = I` holds exactly.
    pub fn from_c(c: &CMatrix) -> Result<Self> {
        let n = c.nrows();
        if c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "feedback matrix is {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        let b = CMatrix::from_fn(n, n, |i, j| if i > j { c[(i, j)] } else { c64(0.0, 0.0) });
        let c = &b + CMatrix::identity(n, n);
        Ok(PrecoderFeedback { b, c })
    }

    pub fn b(&self) -> &CMatrix {
        &self.b
    }

    pub fn c(&self) -> &CMatrix {
        &self.c
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn is_linear(&self) -> bool {
        self.b.iter().all(|z| *z == c64(0.0, 0.0))
    }
}

/// Successive THP precoding of the symbol vector `a`.
pub fn thp_encode(a: &CVector, feedback: &PrecoderFeedback, m: u32) -> Result<CVector> {
    let n = feedback.n();
    if a.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "symbol vector of length {} for {n} streams",
            a.len()
        )));
    }
    let bmat = feedback.b();
    let mut b = CVector::zeros(n);
    for k in 0..n {
        let interference: C64 = (0..k).map(|l| bmat[(k, l)] * b[l]).sum();
        b[k] = modulo(a[k] - interference, m);
    }
    Ok(b)
}

/// Receive modulo followed by slicing, per component.
pub fn detect(y_eq: &CVector, m: u32) -> Result<CVector> {
    let qam = QamConstellation::new(m)?;
    Ok(y_eq.map(|z| qam.slice(modulo(z, m))))
}
