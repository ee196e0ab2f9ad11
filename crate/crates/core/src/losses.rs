//! Training objectives and their exact gradients.
//!
//! * [`nll_loss`]: negative log-likelihood of each view's projected feature
//!   under its own mixture.
//! * [`pcl_loss`]: probabilistic contrastive loss over a batch of mixtures,
//!   with positives selected and weighted by label overlap.
//! * [`total_loss`]: `nll + λ·pcl`.
//! * [`asl_loss`]: asymmetric loss for the linear classifier stage.
//!
//! Gradients are derived by hand with respect to the mixture parameters
//! (weights, means, variances) and the evaluation points, so that each loss
//! can be recorded on the tape as a single fused node.

use serde::{Deserialize, Serialize};

use crate::error::{input, numeric, Result};
use crate::gmm::{self, log_cross_sum, log_cross_term, log_correlation, log_sum_exp, IsoGaussianMixture};
use crate::overlap::{positive_sets, LabelVector, OverlapMeasure, PositiveSet};

/// Similarity between two mixtures used inside the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Similarity {
    /// Closed-form normalized inner product. The only differentiable backend.
    #[default]
    Correlation,
    /// Monte-Carlo Bhattacharyya coefficient; value only.
    BhattacharyyaMc { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveLossConfig {
    pub tau: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub measure: OverlapMeasure,
    pub sim: Similarity,
}

impl Default for ContrastiveLossConfig {
    fn default() -> Self {
        Self { tau: 0.2, alpha: 0.6, lambda: 0.3, measure: OverlapMeasure::Jaccard, sim: Similarity::Correlation }
    }
}

impl ContrastiveLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return input(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return input(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return input(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if let Similarity::BhattacharyyaMc { samples: 0, .. } = self.sim {
            return input("Bhattacharyya backend needs at least one sample");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AslConfig {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub margin: f64,
}

impl Default for AslConfig {
    fn default() -> Self {
        Self { gamma_pos: 0.0, gamma_neg: 4.0, margin: 0.05 }
    }
}

impl AslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_pos >= 0.0 && self.gamma_neg >= 0.0) {
            return input("ASL focusing exponents must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.margin) {
            return input(format!("ASL margin must lie in [0, 1), got {}", self.margin));
        }
        Ok(())
    }
}

/// Gradient with respect to one mixture's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureGrad {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl MixtureGrad {
    fn zeros(c: usize) -> Self {
        Self { weights: vec![0.0; c], means: vec![0.0; c], variances: vec![0.0; c] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllOutput {
    pub loss: f64,
    pub mixture_grads: Vec<MixtureGrad>,
    pub target_grads: Vec<Vec<f64>>,
}

/// `Σ_i −log p_i(z_i)`.
pub fn nll_loss(mixtures: &[IsoGaussianMixture], targets: &[Vec<f64>]) -> Result<NllOutput> {
    if mixtures.len() != targets.len() {
        return input(format!("{} mixtures but {} targets", mixtures.len(), targets.len()));
    }
    let mut loss = 0.0;
    let mut mixture_grads = Vec::with_capacity(mixtures.len());
    let mut target_grads = Vec::with_capacity(mixtures.len());
    for (gmm, z) in mixtures.iter().zip(targets) {
        if z.len() != gmm.dim() {
            return input(format!("target has dimension {}, mixture has {}", z.len(), gmm.dim()));
        }
        let n = gmm.dim() as f64;
        let c = gmm.num_components();
        let sq: Vec<f64> = gmm.means().iter().map(|mu| z.iter().map(|x| (x - mu) * (x - mu)).sum()).collect();
        let log_normal: Vec<f64> = (0..c)
            .map(|k| {
                let v = gmm.variances()[k];
                -0.5 * n * (2.0 * std::f64::consts::PI * v).ln() - sq[k] / (2.0 * v)
            })
            .collect();
        let terms: Vec<f64> = (0..c).map(|k| gmm.weights()[k].ln() + log_normal[k]).collect();
        let lp = log_sum_exp(&terms);
        if !lp.is_finite() {
            return numeric(format!("log-likelihood is {lp}"));
        }
        loss -= lp;

        let mut g = MixtureGrad::zeros(c);
        let mut gz = vec![0.0; z.len()];
        for k in 0..c {
            let v = gmm.variances()[k];
            let mu = gmm.means()[k];
            let r = (terms[k] - lp).exp();
            g.weights[k] = -(log_normal[k] - lp).exp();
            g.means[k] = -r * z.iter().map(|x| x - mu).sum::<f64>() / v;
            g.variances[k] = -r * (-n / (2.0 * v) + sq[k] / (2.0 * v * v));
            for (gd, x) in gz.iter_mut().zip(z) {
                *gd += r * (x - mu) / v;
            }
        }
        mixture_grads.push(g);
        target_grads.push(gz);
    }
    Ok(NllOutput { loss, mixture_grads, target_grads })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PclOutput {
    pub loss: f64,
    pub grads: Vec<MixtureGrad>,
    /// Mean `|A(i)|` over the batch.
    pub mean_positive_set_size: f64,
}

fn check_batch(mixtures: &[IsoGaussianMixture], labels: &[LabelVector]) -> Result<()> {
    if mixtures.len() != labels.len() {
        return input(format!("{} mixtures but {} label vectors", mixtures.len(), labels.len()));
    }
    if mixtures.len() < 2 {
        return input(format!("contrastive batch needs at least two views, got {}", mixtures.len()));
    }
    let dim = mixtures[0].dim();
    if mixtures.iter().any(|m| m.dim() != dim) {
        return input("mixtures in a batch must share a dimension");
    }
    Ok(())
}

/// Pairwise similarity matrix, row-major `B×B`.
pub fn similarity_matrix(mixtures: &[IsoGaussianMixture], sim: Similarity) -> Result<Vec<f64>> {
    let b = mixtures.len();
    let mut out = vec![0.0; b * b];
    match sim {
        Similarity::Correlation => {
            let log_s = log_cross_matrix(mixtures);
            for i in 0..b {
                for j in 0..b {
                    out[i * b + j] = pair_similarity(&log_s, b, i, j);
                }
            }
        }
        Similarity::BhattacharyyaMc { samples, seed } => {
            for i in 0..b {
                for j in 0..b {
                    let s = crate::rng::derive_seed(seed, (i * b + j) as u64);
                    out[i * b + j] = gmm::bhattacharyya_coefficient_mc(&mixtures[i], &mixtures[j], samples, s)?.estimate;
                }
            }
        }
    }
    Ok(out)
}

/// `log ∫ p_i p_j` for every pair, row-major and symmetric.
fn log_cross_matrix(mixtures: &[IsoGaussianMixture]) -> Vec<f64> {
    let b = mixtures.len();
    let mut buf = Vec::new();
    let mut out = vec![0.0; b * b];
    for i in 0..b {
        for j in i..b {
            let v = log_cross_sum(&mixtures[i], &mixtures[j], &mut buf);
            out[i * b + j] = v;
            out[j * b + i] = v;
        }
    }
    out
}

fn pair_similarity(log_s: &[f64], b: usize, i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        log_correlation(log_s[i * b + j], log_s[i * b + i], log_s[j * b + j])
    }
}

/// Per-anchor softmax pieces shared by value and gradient code.
struct AnchorTerms {
    loss: f64,
    /// `∂loss/∂sim[i][l]` for the anchor's row.
    row_grad: Vec<f64>,
}

fn anchor_terms(i: usize, sims: &[f64], b: usize, set: &PositiveSet, tau: f64) -> AnchorTerms {
    let mut row_grad = vec![0.0; b];
    if set.is_empty() {
        return AnchorTerms { loss: 0.0, row_grad };
    }
    let logits: Vec<f64> = (0..b).filter(|&l| l != i).map(|l| sims[i * b + l] / tau).collect();
    let lse = log_sum_exp(&logits);
    let card = set.len() as f64;
    let mut loss = 0.0;
    let mut weight_total = 0.0;
    for &(j, d) in &set.members {
        loss -= d * (sims[i * b + j] / tau - lse) / card;
        weight_total += d;
        row_grad[j] -= d / (card * tau);
    }
    let w = weight_total / card;
    for l in (0..b).filter(|&l| l != i) {
        let soft = (sims[i * b + l] / tau - lse).exp();
        row_grad[l] += w * soft / tau;
    }
    AnchorTerms { loss, row_grad }
}

/// Value of the probabilistic contrastive loss under any similarity backend.
pub fn pcl_loss_value(mixtures: &[IsoGaussianMixture], labels: &[LabelVector], cfg: &ContrastiveLossConfig) -> Result<f64> {
    cfg.validate()?;
    check_batch(mixtures, labels)?;
    let b = mixtures.len();
    let sims = similarity_matrix(mixtures, cfg.sim)?;
    let sets = positive_sets(labels, cfg.alpha, cfg.measure)?;
    Ok((0..b).map(|i| anchor_terms(i, &sims, b, &sets[i], cfg.tau).loss).sum())
}

/// Probabilistic contrastive loss and its gradient with respect to every
/// mixture parameter. Anchors without positives contribute nothing.
pub fn pcl_loss(mixtures: &[IsoGaussianMixture], labels: &[LabelVector], cfg: &ContrastiveLossConfig) -> Result<PclOutput> {
    cfg.validate()?;
    check_batch(mixtures, labels)?;
    if cfg.sim != Similarity::Correlation {
        return input("only the correlation similarity is differentiable");
    }
    let sets = positive_sets(labels, cfg.alpha, cfg.measure)?;
    pcl_with_sets(mixtures, &sets, cfg.tau)
}

pub(crate) fn pcl_with_sets(mixtures: &[IsoGaussianMixture], sets: &[PositiveSet], tau: f64) -> Result<PclOutput> {
    let b = mixtures.len();
    let log_s = log_cross_matrix(mixtures);
    let mut sims = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            sims[i * b + j] = pair_similarity(&log_s, b, i, j);
        }
    }

    let mut loss = 0.0;
    let mut sim_grad = vec![0.0; b * b];
    for i in 0..b {
        let t = anchor_terms(i, &sims, b, &sets[i], tau);
        loss += t.loss;
        for l in 0..b {
            sim_grad[i * b + l] = t.row_grad[l];
        }
    }
    if !loss.is_finite() {
        return numeric(format!("contrastive loss is {loss}"));
    }

    // Chain through ρ_ij = S_ij / sqrt(S_ii S_jj). Each S is only needed
    // through ∂S/S = ∂log S, so store u = S·∂loss/∂S.
    let mut u = vec![0.0; b * b];
    for i in 0..b {
        for j in i + 1..b {
            let g = sim_grad[i * b + j] + sim_grad[j * b + i];
            if g == 0.0 {
                continue;
            }
            let rho = sims[i * b + j];
            u[i * b + j] += g * rho;
            u[i * b + i] -= g * rho / 2.0;
            u[j * b + j] -= g * rho / 2.0;
        }
    }

    let mut grads: Vec<MixtureGrad> = mixtures.iter().map(|m| MixtureGrad::zeros(m.num_components())).collect();
    for i in 0..b {
        for j in i..b {
            let g = u[i * b + j];
            if g != 0.0 {
                accumulate_log_cross_grad(&mixtures[i], &mixtures[j], g, log_s[i * b + j], &mut grads, i, j);
            }
        }
    }
    let mean_positive_set_size = sets.iter().map(|s| s.len() as f64).sum::<f64>() / b as f64;
    Ok(PclOutput { loss, grads, mean_positive_set_size })
}

/// Adds `scale · ∂log S(p, q)/∂θ` into the gradients of mixtures `ip` and
/// `iq`, given `log_s = log S(p, q)`. With `ip == iq` both sides land on the
/// same mixture, which is the derivative of the self-integral.
fn accumulate_log_cross_grad(
    p: &IsoGaussianMixture,
    q: &IsoGaussianMixture,
    scale: f64,
    log_s: f64,
    grads: &mut [MixtureGrad],
    ip: usize,
    iq: usize,
) {
    let n = p.dim() as f64;
    let cp = p.num_components();
    let cq = q.num_components();
    let mut gp = MixtureGrad::zeros(cp);
    let mut gq = MixtureGrad::zeros(cq);
    for k in 0..cp {
        for m in 0..cq {
            let (mu_a, va) = (p.means()[k], p.variances()[k]);
            let (mu_b, vb) = (q.means()[m], q.variances()[m]);
            // term relative to the whole sum; weights stay in the exponent
            // so a zero weight cannot meet an overflowing term
            let lt = log_cross_term(mu_a, va, mu_b, vb, n) - log_s;
            let (la, lb) = (p.weights()[k].ln(), q.weights()[m].ln());
            let wt = (la + lb + lt).exp();
            let sum = va + vb;
            let d = mu_a - mu_b;
            let dmean = -n * d / sum;
            let dvar = -n / (2.0 * sum) + n * d * d / (2.0 * sum * sum);
            gp.weights[k] += (lb + lt).exp();
            gq.weights[m] += (la + lt).exp();
            gp.means[k] += wt * dmean;
            gq.means[m] -= wt * dmean;
            gp.variances[k] += wt * dvar;
            gq.variances[m] += wt * dvar;
        }
    }
    for (target, src) in [(ip, gp), (iq, gq)] {
        let g = &mut grads[target];
        for k in 0..src.weights.len() {
            g.weights[k] += scale * src.weights[k];
            g.means[k] += scale * src.means[k];
            g.variances[k] += scale * src.variances[k];
        }
    }
}

/// `nll + λ·pcl`.
pub fn total_loss(nll: f64, pcl: f64, lambda: f64) -> f64 {
    nll + lambda * pcl
}

#[derive(Debug, Clone, PartialEq)]
pub struct AslOutput {
    pub loss: f64,
    /// `∂loss/∂p` per sample and class.
    pub grads: Vec<Vec<f64>>,
}

/// Probabilities are clamped at this value inside logarithms.
pub const ASL_LOG_EPS: f64 = 1e-8;

/// Asymmetric loss summed over classes and samples.
pub fn asl_loss(probabilities: &[Vec<f64>], labels: &[LabelVector], cfg: &AslConfig) -> Result<AslOutput> {
    cfg.validate()?;
    if probabilities.len() != labels.len() {
        return input(format!("{} score rows but {} label vectors", probabilities.len(), labels.len()));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(labels.len());
    for (probs, y) in probabilities.iter().zip(labels) {
        if probs.len() != y.len() {
            return input(format!("{} probabilities for {} classes", probs.len(), y.len()));
        }
        let mut row = Vec::with_capacity(probs.len());
        for (k, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return input(format!("probability {p} outside [0, 1]"));
            }
            let (l, g) = if y.get(k) { asl_positive(p, cfg.gamma_pos) } else { asl_negative(p, cfg.gamma_neg, cfg.margin) };
            loss += l;
            row.push(g);
        }
        grads.push(row);
    }
    Ok(AslOutput { loss, grads })
}

fn asl_positive(p: f64, gamma: f64) -> (f64, f64) {
    let lp = p.max(ASL_LOG_EPS).ln();
    let dlog = if p >= ASL_LOG_EPS { 1.0 / p } else { 0.0 };
    let q = 1.0 - p;
    let focus = q.powf(gamma);
    let dfocus = if gamma == 0.0 || q == 0.0 { 0.0 } else { -gamma * q.powf(gamma - 1.0) };
    (-focus * lp, -(dfocus * lp + focus * dlog))
}

fn asl_negative(p: f64, gamma: f64, margin: f64) -> (f64, f64) {
    if margin > 0.0 && p <= margin {
        return (0.0, 0.0);
    }
    let pm = (p - margin).max(0.0);
    let q = 1.0 - pm;
    let lq = q.max(ASL_LOG_EPS).ln();
    let dlq = if q >= ASL_LOG_EPS { -1.0 / q } else { 0.0 };
    let focus = pm.powf(gamma);
    let dfocus = if gamma == 0.0 || pm == 0.0 { 0.0 } else { gamma * pm.powf(gamma - 1.0) };
    (-focus * lq, -(dfocus * lq + focus * dlq))
}
