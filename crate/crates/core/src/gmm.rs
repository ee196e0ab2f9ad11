//! Isotropic Gaussian mixtures whose component means lie on the diagonal
//! `μ_k·1` of ℝⁿ, and closed-form similarity between two such mixtures.
//!
//! Because every mean is a multiple of the all-ones vector and every
//! covariance is a multiple of the identity, every integral that appears
//! here depends on the component parameters only through `n·(μa − μb)²`
//! and `va + vb`. The n-dimensional integrals reduce to scalar formulas.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{input, numeric, Result};
use crate::rng;

/// Tolerance on `Σ π_k = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Lower bound enforced on every component variance.
pub const VARIANCE_FLOOR: f64 = 1.0;

/// Mixture of `C` isotropic Gaussians in ℝⁿ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoGaussianMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    dim: usize,
}

impl IsoGaussianMixture {
    /// Builds a mixture, checking every invariant.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>, dim: usize) -> Result<Self> {
        let gmm = Self::from_parts(weights, means, variances, dim)?;
        let total: f64 = gmm.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return input(format!("mixture weights sum to {total}, expected 1"));
        }
        if let Some(w) = gmm.weights.iter().find(|w| **w < 0.0) {
            return input(format!("negative mixture weight {w}"));
        }
        if let Some(v) = gmm.variances.iter().find(|v| **v < VARIANCE_FLOOR) {
            return input(format!("variance {v} below floor {VARIANCE_FLOOR}"));
        }
        Ok(gmm)
    }

    /// Shape and finiteness checks only. Used where parameters are perturbed
    /// off the simplex (finite differences) or come from trusted activations.
    pub(crate) fn from_parts(
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        let c = weights.len();
        if c == 0 {
            return input("mixture needs at least one component");
        }
        if means.len() != c || variances.len() != c {
            return input(format!(
                "component count mismatch: {} weights, {} means, {} variances",
                c,
                means.len(),
                variances.len()
            ));
        }
        if dim == 0 {
            return input("mixture dimension must be positive");
        }
        let all = weights.iter().chain(&means).chain(&variances);
        if let Some(x) = all.clone().find(|x| !x.is_finite()) {
            return numeric(format!("non-finite mixture parameter {x}"));
        }
        if let Some(v) = variances.iter().find(|v| **v <= 0.0) {
            return input(format!("nonpositive variance {v}"));
        }
        Ok(Self { weights, means, variances, dim })
    }

    /// Single Gaussian `N(μ·1, v·I)`.
    pub fn single(mean: f64, variance: f64, dim: usize) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance], dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return input(format!("point has dimension {}, mixture has {}", z.len(), self.dim));
        }
        if z.iter().any(|x| !x.is_finite()) {
            return numeric("non-finite evaluation point");
        }
        Ok(())
    }

    /// Per-component `log π_k + log N(z; μ_k·1, v_k·I)`.
    pub(crate) fn component_log_terms(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim as f64;
        (0..self.num_components())
            .map(|k| {
                let v = self.variances[k];
                let mu = self.means[k];
                let sq: f64 = z.iter().map(|x| (x - mu) * (x - mu)).sum();
                self.weights[k].ln() - 0.5 * n * (2.0 * PI * v).ln() - sq / (2.0 * v)
            })
            .collect()
    }
}

/// `log Σ exp(x_i)`, shifted by the maximum.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Evaluates `Σ_k π_k N(z; μ_k·1, v_k·I)` by direct summation.
pub fn density(gmm: &IsoGaussianMixture, z: &[f64]) -> Result<f64> {
    gmm.check_point(z)?;
    let n = gmm.dim as f64;
    let mut total = 0.0;
    for k in 0..gmm.num_components() {
        let v = gmm.variances[k];
        let mu = gmm.means[k];
        let sq: f64 = z.iter().map(|x| (x - mu) * (x - mu)).sum();
        total += gmm.weights[k] * (2.0 * PI * v).powf(-0.5 * n) * (-sq / (2.0 * v)).exp();
    }
    Ok(total)
}

/// Log of [`density`], computed with log-sum-exp so that far-tail points
/// stay finite.
pub fn log_density(gmm: &IsoGaussianMixture, z: &[f64]) -> Result<f64> {
    gmm.check_point(z)?;
    let value = log_sum_exp(&gmm.component_log_terms(z));
    if value.is_nan() {
        return numeric("log density is NaN");
    }
    Ok(value)
}

/// `∫ N(z; μa·1, va·I) N(z; μb·1, vb·I) dz`
/// `= (2π(va+vb))^(−n/2) · exp(−n(μa−μb)² / (2(va+vb)))`.
pub fn gaussian_cross_integral(mean_a: f64, var_a: f64, mean_b: f64, var_b: f64, dim: usize) -> Result<f64> {
    if !(var_a > 0.0 && var_b > 0.0) {
        return input(format!("variances must be positive, got {var_a} and {var_b}"));
    }
    if dim == 0 {
        return input("dimension must be positive");
    }
    Ok(cross_term(mean_a, var_a, mean_b, var_b, dim as f64))
}

#[inline]
pub(crate) fn cross_term(mean_a: f64, var_a: f64, mean_b: f64, var_b: f64, n: f64) -> f64 {
    log_cross_term(mean_a, var_a, mean_b, var_b, n).exp()
}

#[inline]
pub(crate) fn log_cross_term(mean_a: f64, var_a: f64, mean_b: f64, var_b: f64, n: f64) -> f64 {
    let s = var_a + var_b;
    let d = mean_a - mean_b;
    -0.5 * n * (2.0 * PI * s).ln() - n * d * d / (2.0 * s)
}

fn check_same_dim(p: &IsoGaussianMixture, q: &IsoGaussianMixture) -> Result<()> {
    if p.dim != q.dim {
        return input(format!("mixture dimensions differ: {} vs {}", p.dim, q.dim));
    }
    Ok(())
}

/// Total order over mixtures used to make pairwise sums independent of
/// argument order.
fn canonical_cmp(p: &IsoGaussianMixture, q: &IsoGaussianMixture) -> Ordering {
    let key = |g: &IsoGaussianMixture| {
        g.weights
            .iter()
            .chain(&g.means)
            .chain(&g.variances)
            .map(|x| x.to_bits())
            .collect::<Vec<_>>()
    };
    key(p).cmp(&key(q))
}

/// `∫ p(z) q(z) dz` in closed form. Bitwise symmetric in its arguments.
pub fn mixture_cross_integral(p: &IsoGaussianMixture, q: &IsoGaussianMixture) -> Result<f64> {
    check_same_dim(p, q)?;
    let (a, b) = match canonical_cmp(p, q) {
        Ordering::Greater => (q, p),
        _ => (p, q),
    };
    Ok(cross_sum(a, b))
}

fn cross_sum(a: &IsoGaussianMixture, b: &IsoGaussianMixture) -> f64 {
    let n = a.dim as f64;
    let mut total = 0.0;
    for k in 0..a.num_components() {
        for l in 0..b.num_components() {
            total += a.weights[k]
                * b.weights[l]
                * cross_term(a.means[k], a.variances[k], b.means[l], b.variances[l], n);
        }
    }
    total
}

/// Normalized inner product of two densities,
/// `∫pq / sqrt(∫p² ∫q²)`, in (0, 1].
///
/// Evaluated in log space, so it stays finite in high dimensions where the
/// integrals themselves underflow.
pub fn correlation_coefficient(p: &IsoGaussianMixture, q: &IsoGaussianMixture) -> Result<f64> {
    check_same_dim(p, q)?;
    let (a, b) = match canonical_cmp(p, q) {
        Ordering::Greater => (q, p),
        _ => (p, q),
    };
    let mut buf = Vec::new();
    let pq = log_cross_sum(a, b, &mut buf);
    let pp = log_cross_sum(p, p, &mut buf);
    let qq = log_cross_sum(q, q, &mut buf);
    Ok(log_correlation(pq, pp, qq))
}

/// `ρ` from the logs of `∫pq`, `∫p²`, `∫q²`.
#[inline]
pub(crate) fn log_correlation(pq: f64, pp: f64, qq: f64) -> f64 {
    (pq - 0.5 * (pp + qq)).exp()
}

/// `log ∫ a b`. `buf` is scratch space for the `C_a·C_b` log terms.
pub(crate) fn log_cross_sum(a: &IsoGaussianMixture, b: &IsoGaussianMixture, buf: &mut Vec<f64>) -> f64 {
    let n = a.dim as f64;
    buf.clear();
    for k in 0..a.num_components() {
        for l in 0..b.num_components() {
            buf.push(
                a.weights[k].ln()
                    + b.weights[l].ln()
                    + log_cross_term(a.means[k], a.variances[k], b.means[l], b.variances[l], n),
            );
        }
    }
    log_sum_exp(buf)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    /// `f64::INFINITY` when fewer than two samples were drawn.
    pub std_error: f64,
}

/// Draws one point from the mixture.
pub fn sample(gmm: &IsoGaussianMixture, rng: &mut rng::Rng) -> Vec<f64> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut k = gmm.num_components() - 1;
    for (i, w) in gmm.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            k = i;
            break;
        }
    }
    let sd = gmm.variances[k].sqrt();
    (0..gmm.dim)
        .map(|_| gmm.means[k] + sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn mc_mean(samples: usize, seed: u64, p: &IsoGaussianMixture, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<McEstimate> {
    if samples == 0 {
        return input("need at least one sample");
    }
    let mut rng = rng::seeded(seed);
    // Welford
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..samples {
        let z = sample(p, &mut rng);
        let x = f(&z)?;
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let std_error = if samples < 2 {
        f64::INFINITY
    } else {
        (m2 / (samples - 1) as f64 / samples as f64).sqrt()
    };
    Ok(McEstimate { estimate: mean, std_error })
}

/// Importance-sampling estimate of `∫ p q dz`: draws `z ~ p` and averages `q(z)`.
pub fn mc_cross_integral(p: &IsoGaussianMixture, q: &IsoGaussianMixture, samples: usize, seed: u64) -> Result<McEstimate> {
    check_same_dim(p, q)?;
    mc_mean(samples, seed, p, |z| density(q, z))
}

/// Monte-Carlo Bhattacharyya coefficient `∫ sqrt(p q) dz`, estimated as
/// `E_{z~p} sqrt(q(z)/p(z))`. Mixtures have no closed form for this.
pub fn bhattacharyya_coefficient_mc(p: &IsoGaussianMixture, q: &IsoGaussianMixture, samples: usize, seed: u64) -> Result<McEstimate> {
    check_same_dim(p, q)?;
    mc_mean(samples, seed, p, |z| {
        let ratio = log_density(q, z)? - log_density(p, z)?;
        Ok((0.5 * ratio).exp())
    })
}

/// Monte-Carlo estimate of `∫ p dz` using a Gaussian proposal with
/// standard deviation `proposal_sd` centred at the weighted mean. Used to
/// check normalization.
pub fn mc_total_mass(p: &IsoGaussianMixture, proposal_sd: f64, samples: usize, seed: u64) -> Result<McEstimate> {
    let centre: f64 = p.weights.iter().zip(&p.means).map(|(w, m)| w * m).sum();
    let proposal = IsoGaussianMixture::from_parts(vec![1.0], vec![centre], vec![proposal_sd * proposal_sd], p.dim)?;
    mc_mean(samples, seed, &proposal, |z| Ok(density(p, z)? / density(&proposal, z)?))
}
