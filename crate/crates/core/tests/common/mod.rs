//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's numeric code.

#![allow(dead_code)]

use std::f64::consts::PI;

use probmcl::gmm::IsoGaussianMixture;
use probmcl::model::{Activation, ModelConfig, ModelParams};
use probmcl::overlap::LabelVector;
use rand::Rng;

pub type Rng64 = rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> Rng64 {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn random_mixture(r: &mut Rng64, c: usize, dim: usize, mean: f64, var: (f64, f64)) -> IsoGaussianMixture {
    let raw: Vec<f64> = (0..c).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    IsoGaussianMixture::new(
        raw.iter().map(|w| w / s).collect(),
        (0..c).map(|_| r.random_range(-mean..=mean)).collect(),
        (0..c).map(|_| r.random_range(var.0..=var.1)).collect(),
        dim,
    )
    .unwrap()
}

/// Label vector with at least one active class.
pub fn random_labels(r: &mut Rng64, c: usize) -> LabelVector {
    loop {
        let bits: Vec<u8> = (0..c).map(|_| u8::from(r.random_bool(0.5))).collect();
        if bits.contains(&1) {
            return LabelVector::new(bits).unwrap();
        }
    }
}

/// Two-view labels: each source vector appears twice in a row.
pub fn paired_labels(r: &mut Rng64, n: usize, c: usize) -> Vec<LabelVector> {
    (0..n).flat_map(|_| {
        let y = random_labels(r, c);
        [y.clone(), y]
    }).collect()
}

/// Density of a one-dimensional mixture at `x`.
pub fn density_1d(m: &IsoGaussianMixture, x: f64) -> f64 {
    m.weights()
        .iter()
        .zip(m.means())
        .zip(m.variances())
        .map(|((w, mu), v)| w * (-(x - mu) * (x - mu) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt())
        .sum()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let f: &dyn Fn(f64) -> f64 = &f;
    // split first so narrow peaks are not skipped by the coarse estimate
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            adaptive(f, lo, hi, fa, fm, fb, simpson(lo, hi, fa, fm, fb), tol / pieces as f64, 40)
        })
        .sum()
}

/// `∫ p q` over the real line for one-dimensional mixtures, by quadrature.
pub fn quadrature_cross(p: &IsoGaussianMixture, q: &IsoGaussianMixture) -> f64 {
    let reach = p.means().iter().chain(q.means()).fold(0.0f64, |a, m| a.max(m.abs()));
    let sd = p.variances().iter().chain(q.variances()).fold(0.0f64, |a, v| a.max(v.sqrt()));
    let l = reach + 14.0 * sd;
    integrate(|x| density_1d(p, x) * density_1d(q, x), -l, l, 1e-13)
}

/// Direct double sum of Gaussian product integrals.
pub fn direct_cross(p: &IsoGaussianMixture, q: &IsoGaussianMixture) -> f64 {
    let n = p.dim() as f64;
    let mut s = 0.0;
    for k in 0..p.num_components() {
        for m in 0..q.num_components() {
            let v = p.variances()[k] + q.variances()[m];
            let d = p.means()[k] - q.means()[m];
            s += p.weights()[k] * q.weights()[m] * (2.0 * PI * v).powf(-n / 2.0) * (-n * d * d / (2.0 * v)).exp();
        }
    }
    s
}

pub fn direct_correlation(p: &IsoGaussianMixture, q: &IsoGaussianMixture) -> f64 {
    direct_cross(p, q) / (direct_cross(p, p) * direct_cross(q, q)).sqrt()
}

pub fn naive_jaccard(a: &LabelVector, b: &LabelVector) -> f64 {
    let (mut inter, mut union) = (0, 0);
    for k in 0..a.len() {
        inter += usize::from(a.get(k) && b.get(k));
        union += usize::from(a.get(k) || b.get(k));
    }
    if union == 0 { 0.0 } else { inter as f64 / union as f64 }
}

pub fn naive_cosine(a: &LabelVector, b: &LabelVector) -> f64 {
    let (na, nb) = (a.count() as f64, b.count() as f64);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let inter = (0..a.len()).filter(|&k| a.get(k) && b.get(k)).count() as f64;
    inter / (na * nb).sqrt()
}

/// Straight transcription of the weighted contrastive loss:
/// `Σ_i Σ_{j∈A(i)} D_ij/|A(i)| · −log(exp(S_ij/τ) / Σ_{k≠i} exp(S_ik/τ))`
/// with Jaccard overlap.
pub fn brute_force_pcl(mixtures: &[IsoGaussianMixture], labels: &[LabelVector], tau: f64, alpha: f64) -> f64 {
    let b = mixtures.len();
    let sim = |i: usize, j: usize| direct_correlation(&mixtures[i], &mixtures[j]);
    let mut loss = 0.0;
    for i in 0..b {
        let members: Vec<(usize, f64)> = (0..b)
            .filter(|&j| j != i)
            .map(|j| (j, naive_jaccard(&labels[i], &labels[j])))
            .filter(|&(_, d)| d >= alpha && d > 0.0)
            .collect();
        if members.is_empty() {
            continue;
        }
        let denom: f64 = (0..b).filter(|&k| k != i).map(|k| (sim(i, k) / tau).exp()).sum();
        for &(j, d) in &members {
            loss -= d / members.len() as f64 * ((sim(i, j) / tau).exp() / denom).ln();
        }
    }
    loss
}

pub struct NaiveMetrics {
    pub map: f64,
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    pub or_: f64,
    pub of1: f64,
}

fn naive_f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
}

/// AP from explicit ranks: sample `i` is ranked above `j` when its score is
/// higher, or equal with a smaller index.
pub fn naive_ap(scores: &[f64], truths: &[bool]) -> Option<f64> {
    let n = scores.len();
    let rank = |i: usize| 1 + (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count();
    let mut by_rank: Vec<usize> = (0..n).filter(|&i| truths[i]).map(rank).collect();
    by_rank.sort_unstable();
    if by_rank.is_empty() {
        return None;
    }
    let sum: f64 = by_rank.iter().enumerate().map(|(h, &r)| (h + 1) as f64 / r as f64).sum();
    Some(sum / by_rank.len() as f64)
}

pub fn naive_metrics(scores: &[Vec<f64>], truths: &[Vec<bool>], threshold: f64) -> NaiveMetrics {
    let c = scores[0].len();
    let mut aps = Vec::new();
    let (mut ps, mut rs) = (Vec::new(), Vec::new());
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    for k in 0..c {
        let col: Vec<f64> = scores.iter().map(|s| s[k]).collect();
        let tcol: Vec<bool> = truths.iter().map(|t| t[k]).collect();
        if let Some(ap) = naive_ap(&col, &tcol) {
            aps.push(ap);
        }
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (s, t) in col.iter().zip(&tcol) {
            match (*s > threshold, *t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        ps.push(if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 });
        rs.push(if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 });
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (cp, cr) = (mean(&ps), mean(&rs));
    let op = if tp_all + fp_all == 0 { 1.0 } else { tp_all as f64 / (tp_all + fp_all) as f64 };
    let or_ = if tp_all + fn_all == 0 { 1.0 } else { tp_all as f64 / (tp_all + fn_all) as f64 };
    NaiveMetrics { map: mean(&aps), cp, cr, cf1: naive_f1(cp, cr), op, or_, of1: naive_f1(op, or_) }
}

/// Small smooth network for gradient checks.
pub fn toy_model(classes: usize, mixture_dim: usize, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        input_dim: 3,
        encoder_hidden: vec![4],
        embed_dim: 3,
        mixture_dim,
        num_classes: classes,
        mdn_hidden: vec![5, 4],
        activation: Activation::Tanh,
    };
    ModelParams::init(&cfg, seed).unwrap()
}

pub fn random_inputs(r: &mut Rng64, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}
