//! Kernel complexity functions and their fixed points.
//!
//! For a non-increasing eigenvalue sequence `μ_j` and sample size `n`:
//!
//! * `R(δ) = ((1/n) Σ_j min{δ, μ_j})^{1/2}`, a sub-root function of δ;
//! * the critical radius `δ*` is the unique positive root of `R(δ) = δ`;
//! * `d(δ) = #{j : μ_j ≥ δ}` and `D(δ) = Σ_j μ_j / (μ_j + δ)`.
//!
//! Polynomial and exponential families are evaluated in closed form (count of
//! eigenvalues above δ plus an analytic tail sum), so `R` is exact at any δ
//! without materializing the sequence.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::GramMatrix;
use crate::linalg;
use crate::rng::{derive_seed, rng_from_seed};

/// Non-increasing, nonnegative eigenvalue sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectrumRepr", into = "SpectrumRepr")]
pub enum Spectrum {
    Finite(Vec<f64>),
    /// `μ_j = scale · j^{-2·alpha}`, `j ≥ 1`, with `alpha > 1/2`.
    Polynomial { scale: f64, alpha: f64 },
    /// `μ_j = exp(-rate · j)`, `j ≥ 1`.
    Exponential { rate: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
enum SpectrumRepr {
    Finite { eigenvalues: Vec<f64> },
    Polynomial { scale: f64, alpha: f64 },
    Exponential { rate: f64 },
}

impl TryFrom<SpectrumRepr> for Spectrum {
    type Error = Error;
    fn try_from(r: SpectrumRepr) -> Result<Self> {
        match r {
            SpectrumRepr::Finite { eigenvalues } => Spectrum::finite(eigenvalues),
            SpectrumRepr::Polynomial { scale, alpha } => Spectrum::polynomial(scale, alpha),
            SpectrumRepr::Exponential { rate } => Spectrum::exponential(rate),
        }
    }
}

impl From<Spectrum> for SpectrumRepr {
    fn from(s: Spectrum) -> Self {
        match s {
            Spectrum::Finite(eigenvalues) => SpectrumRepr::Finite { eigenvalues },
            Spectrum::Polynomial { scale, alpha } => SpectrumRepr::Polynomial { scale, alpha },
            Spectrum::Exponential { rate } => SpectrumRepr::Exponential { rate },
        }
    }
}

/// Largest f64 below which every integer is representable.
const EXACT_INTEGERS: f64 = 9_007_199_254_740_992.0;

/// Explicit terms summed before switching to the Euler–Maclaurin tail.
const EM_START: f64 = 32.0;

/// `Σ_{j ≥ start} j^{-s}` for `s > 1`, `start ≥ 1`.
fn power_tail(start: f64, s: f64) -> f64 {
    let mut sum = 0.0;
    let mut j = start;
    while j < EM_START {
        sum += j.powf(-s);
        j += 1.0;
    }
    // Euler–Maclaurin from j with Bernoulli corrections up to B6.
    let a = j;
    let s1 = s + 1.0;
    let s2 = s * s1 * (s + 2.0);
    let s3 = s2 * (s + 3.0) * (s + 4.0);
    sum + a.powf(1.0 - s) / (s - 1.0) + 0.5 * a.powf(-s) + s * a.powf(-s1) / 12.0
        - s2 * a.powf(-s - 3.0) / 720.0
        + s3 * a.powf(-s - 5.0) / 30240.0
}

impl Spectrum {
    /// Sorts into non-increasing order and clamps negative rounding noise to 0.
    pub fn finite(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("spectrum needs at least one eigenvalue"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("eigenvalues must be finite"));
        }
        for v in &mut values {
            *v = v.max(0.0);
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Spectrum::Finite(values))
    }

    pub fn polynomial(scale: f64, alpha: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) || !(alpha.is_finite() && alpha > 0.5) {
            return Err(Error::contract(
                "polynomial spectrum needs scale > 0 and alpha > 1/2 (finite trace)",
            ));
        }
        Ok(Spectrum::Polynomial { scale, alpha })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::contract("exponential spectrum needs rate > 0"));
        }
        Ok(Spectrum::Exponential { rate })
    }

    /// Largest eigenvalue μ₁.
    pub fn top(&self) -> f64 {
        match self {
            Spectrum::Finite(v) => v[0],
            Spectrum::Polynomial { scale, .. } => *scale,
            Spectrum::Exponential { rate } => (-rate).exp(),
        }
    }

    /// μ_j for `j ≥ 1`.
    pub fn eigenvalue(&self, j: usize) -> f64 {
        assert!(j >= 1, "eigenvalues are indexed from 1");
        match self {
            Spectrum::Finite(v) => v.get(j - 1).copied().unwrap_or(0.0),
            Spectrum::Polynomial { scale, alpha } => scale * (j as f64).powf(-2.0 * alpha),
            Spectrum::Exponential { rate } => (-rate * j as f64).exp(),
        }
    }

    /// The first `len` eigenvalues (finite spectra are padded with zeros).
    pub fn truncated(&self, len: usize) -> Vec<f64> {
        (1..=len).map(|j| self.eigenvalue(j)).collect()
    }

    pub fn trace(&self) -> f64 {
        match self {
            Spectrum::Finite(v) => v.iter().sum(),
            Spectrum::Polynomial { scale, alpha } => scale * power_tail(1.0, 2.0 * alpha),
            Spectrum::Exponential { rate } => {
                let q = (-rate).exp();
                q / (1.0 - q)
            }
        }
    }

    /// Number of eigenvalues ≥ δ, as a float (may exceed `usize` range).
    fn count_at_least(&self, delta: f64) -> f64 {
        match self {
            Spectrum::Finite(v) => v.partition_point(|&m| m >= delta) as f64,
            Spectrum::Polynomial { scale, alpha } => {
                if delta > *scale {
                    return 0.0;
                }
                let mut j = (scale / delta).powf(0.5 / alpha).floor().max(1.0);
                // past 2^53 the estimate is as exact as f64 allows and j + 1 == j
                if j >= EXACT_INTEGERS {
                    return j;
                }
                let mu = |j: f64| scale * j.powf(-2.0 * alpha);
                while j > 1.0 && mu(j) < delta {
                    j -= 1.0;
                }
                while mu(j + 1.0) >= delta {
                    j += 1.0;
                }
                j
            }
            Spectrum::Exponential { rate } => {
                if delta > (-rate).exp() {
                    return 0.0;
                }
                let mut j = (-delta.ln() / rate).floor().max(1.0);
                while j > 1.0 && (-rate * j).exp() < delta {
                    j -= 1.0;
                }
                while (-rate * (j + 1.0)).exp() >= delta {
                    j += 1.0;
                }
                j
            }
        }
    }

    /// `Σ_{j > count} μ_j`.
    fn tail_after(&self, count: f64) -> f64 {
        match self {
            Spectrum::Finite(v) => v[(count as usize).min(v.len())..].iter().sum(),
            Spectrum::Polynomial { scale, alpha } => scale * power_tail(count + 1.0, 2.0 * alpha),
            Spectrum::Exponential { rate } => {
                let q = (-rate).exp();
                (-rate * (count + 1.0)).exp() / (1.0 - q)
            }
        }
    }

    /// `Σ_j min{δ, μ_j}`.
    pub fn sum_min(&self, delta: f64) -> f64 {
        if delta <= 0.0 {
            return 0.0;
        }
        match self {
            Spectrum::Finite(v) => v.iter().map(|&m| m.min(delta)).sum(),
            _ => {
                let c = self.count_at_least(delta);
                delta * c + self.tail_after(c)
            }
        }
    }
}

/// `R(δ) = ((1/n) Σ_j min{δ, μ_j})^{1/2}`.
pub fn complexity_r(spec: &Spectrum, n: usize, delta: f64) -> f64 {
    (spec.sum_min(delta) / n as f64).sqrt()
}

/// Eigenvalues of a normalized Gram matrix, clamped at zero and sorted.
pub fn empirical_spectrum(gram_norm: &GramMatrix) -> Result<Spectrum> {
    if !gram_norm.is_normalized() {
        return Err(Error::contract("empirical spectrum expects a 1/n-normalized Gram matrix"));
    }
    let (vals, _) = linalg::sorted_symmetric_eigen(gram_norm.values().clone())?;
    Spectrum::finite(vals)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub delta_star: f64,
    pub iterations: usize,
    /// `|R(δ*) - δ*|`
    pub residual: f64,
    /// Final bracket; `R(lo) ≥ lo` and `R(hi) < hi`.
    pub bracket: (f64, f64),
}

/// Positive root of `R(δ) = δ` by bisection.
///
/// The bracket starts at `(1e-300 · scale, √(trace/n) + 1)`; halving is
/// geometric while the bracket spans more than a factor of two and arithmetic
/// afterwards. The returned δ* is the lower end of the final bracket, so
/// `R(δ*) ≥ δ*` holds exactly in floating point.
pub fn fixed_point(spec: &Spectrum, n: usize) -> Result<FixedPointResult> {
    if n == 0 {
        return Err(Error::contract("sample size must be positive"));
    }
    let top = spec.top();
    if !(top > 0.0) {
        return Err(Error::degenerate("all-zero spectrum has no positive fixed point"));
    }
    let g = |d: f64| complexity_r(spec, n, d) - d;
    let plateau = (spec.trace() / n as f64).sqrt();
    let mut lo = 1e-300 * top.min(1.0);
    let mut hi = plateau + 1.0;
    if !(g(lo) >= 0.0) {
        return Err(Error::numeric("lower bracket end does not satisfy R(δ) ≥ δ"));
    }
    debug_assert!(g(hi) < 0.0);
    let mut iterations = 0;
    while iterations < 2000 {
        if hi - lo <= 1e-13 * lo {
            break;
        }
        let mid = if hi > 2.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(FixedPointResult {
        delta_star: lo,
        iterations,
        residual: g(lo).abs(),
        bracket: (lo, hi),
    })
}

/// `d(δ) = #{j : μ_j ≥ δ}`; saturates at `u64::MAX` for generator families.
pub fn statistical_dimension(spec: &Spectrum, delta: f64) -> Result<u64> {
    if !(delta > 0.0) {
        return Err(Error::contract("statistical dimension needs delta > 0"));
    }
    let c = spec.count_at_least(delta);
    Ok(if c >= u64::MAX as f64 { u64::MAX } else { c as u64 })
}

/// Hard cap on explicitly summed terms for generator families.
const MAX_EXPLICIT_TERMS: usize = 10_000_000;

/// `D(δ) = Σ_j μ_j / (μ_j + δ)`.
///
/// `n` is accepted for symmetry with [`complexity_r`]; `D` itself does not
/// depend on it. For generator families, terms are summed until
/// `μ_j ≤ 1e-8 δ` and the remainder is approximated by `tail / δ`.
pub fn effective_dimension(spec: &Spectrum, _n: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::contract("effective dimension needs delta > 0"));
    }
    Ok(match spec {
        Spectrum::Finite(v) => v.iter().map(|&m| m / (m + delta)).sum(),
        _ => {
            let mut sum = 0.0;
            let mut j = 1;
            loop {
                let m = spec.eigenvalue(j);
                if m <= 1e-8 * delta || j >= MAX_EXPLICIT_TERMS {
                    break;
                }
                sum += m / (m + delta);
                j += 1;
            }
            sum + spec.tail_after((j - 1) as f64) / delta
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `(n, δ*(n))` for each grid value.
    pub points: Vec<(usize, f64)>,
    /// OLS slope of `log δ*` against `log n`.
    pub slope: f64,
}

pub fn rate_fit(spec: &Spectrum, n_grid: &[usize]) -> Result<RateFit> {
    if n_grid.len() < 3 {
        return Err(Error::contract("rate fit needs at least three sample sizes"));
    }
    let lo = *n_grid.iter().min().unwrap();
    let hi = *n_grid.iter().max().unwrap();
    if lo == 0 || (hi as f64) < 100.0 * lo as f64 {
        return Err(Error::contract("sample sizes must span at least two decades"));
    }
    let points = n_grid
        .iter()
        .map(|&n| Ok((n, fixed_point(spec, n)?.delta_star)))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, d)| d.ln()).collect();
    Ok(RateFit {
        slope: ols_slope(&xs, &ys),
        points,
    })
}

pub(crate) fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
    pub radius: f64,
    pub delta: f64,
}

/// Monte Carlo estimate of the ellipse-relaxed empirical local Rademacher
/// complexity of a ball of functions around a centre of RKHS norm `radius`.
///
/// For each sign vector ε, with eigenpairs `(μ̂_j, u_j)` of the normalized
/// Gram matrix and `v_j = √(n μ̂_j) u_j`, the per-draw value is
/// `√(V Σ_j c_j² / ν_j)` where `c_j = εᵀv_j / n`, `V = 1 + 9 radius²` and
/// `ν_j = max(μ̂_j / δ, 1)`. Its expectation is at most
/// `√V · R̂(δ) ≤ √10 (radius ∨ 1) R̂(δ)`.
pub fn rademacher_mc(gram_norm: &GramMatrix, radius: f64, delta: f64, draws: usize, seed: u64) -> Result<RademacherEstimate> {
    if !gram_norm.is_normalized() {
        return Err(Error::contract("Rademacher estimate expects a normalized Gram matrix"));
    }
    if !(delta > 0.0) || !(radius > 0.0) || draws == 0 {
        return Err(Error::contract("need delta > 0, radius > 0 and at least one draw"));
    }
    let n = gram_norm.size();
    let (vals, vecs) = linalg::sorted_symmetric_eigen(gram_norm.values().clone())?;
    let big_v = 1.0 + 9.0 * radius * radius;
    let nf = n as f64;
    // weight_j = n μ̂_j / (n² ν_j) so that Σ c_j²/ν_j = Σ weight_j (u_jᵀε)²
    let weights: Vec<f64> = vals
        .iter()
        .map(|&m| {
            let m = m.max(0.0);
            let nu = (m / delta).max(1.0);
            m / (nf * nu)
        })
        .collect();
    let samples: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = rng_from_seed(derive_seed(seed, &[d as u64]));
            let eps = DVector::from_iterator(n, (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }));
            let proj = vecs.tr_mul(&eps);
            let s: f64 = proj.iter().zip(&weights).map(|(p, w)| w * p * p).sum();
            (big_v * s).sqrt()
        })
        .collect();
    let k = draws as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let std_error = if draws > 1 {
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    Ok(RademacherEstimate {
        mean,
        std_error,
        draws,
        radius,
        delta,
    })
}
