//! The contrastive-stage objective recorded on a tape.
//!
//! The network (encoder, mixture head, projection) is recorded op by op.
//! The two losses are attached as single nodes whose partial derivatives
//! come from the analytic gradients in [`crate::losses`].

use crate::error::{input, Result};
use crate::grad::{Tape, Var};
use crate::losses::{nll_loss, pcl_loss, total_loss, ContrastiveLossConfig};
use crate::model::{record_encoder, record_mdn, MixtureVars, ModelParams};
use crate::overlap::LabelVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub nll: f64,
    pub pcl: f64,
    pub mean_positive_set_size: f64,
}

/// Records `NLL + λ·PCL` for a batch of views and returns its node.
///
/// `vars` are the leaves holding `params.data`. The contrastive term is
/// always evaluated, so its value is reported even when `λ = 0`.
pub fn record_total_loss(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &[Var],
    views: &[Vec<f64>],
    labels: &[LabelVector],
    cfg: &ContrastiveLossConfig,
) -> Result<(Var, LossBreakdown)> {
    if views.len() != labels.len() {
        return input(format!("{} views but {} label vectors", views.len(), labels.len()));
    }
    let mut heads: Vec<MixtureVars> = Vec::with_capacity(views.len());
    for x in views {
        let h = record_encoder(tape, params, vars, x)?;
        heads.push(record_mdn(tape, params, vars, &h)?);
    }
    let mixtures = heads.iter().map(|m| m.to_mixture(tape)).collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<f64>> = heads.iter().map(|m| tape.values(&m.z)).collect();

    let nll = nll_loss(&mixtures, &targets)?;
    let mut partials = Vec::new();
    for ((head, g), gz) in heads.iter().zip(&nll.mixture_grads).zip(&nll.target_grads) {
        push_mixture_partials(&mut partials, head, &g.weights, &g.means, &g.variances);
        partials.extend(head.z.iter().copied().zip(gz.iter().copied()));
    }
    let nll_var = tape.custom("nll", nll.loss, &partials);

    let pcl = pcl_loss(&mixtures, labels, cfg)?;
    partials.clear();
    for (head, g) in heads.iter().zip(&pcl.grads) {
        push_mixture_partials(&mut partials, head, &g.weights, &g.means, &g.variances);
    }
    let pcl_var = tape.custom("pcl", pcl.loss, &partials);

    let total = total_loss(nll.loss, pcl.loss, cfg.lambda);
    let out = tape.custom("total", total, &[(nll_var, 1.0), (pcl_var, cfg.lambda)]);
    Ok((
        out,
        LossBreakdown { total, nll: nll.loss, pcl: pcl.loss, mean_positive_set_size: pcl.mean_positive_set_size },
    ))
}

fn push_mixture_partials(out: &mut Vec<(Var, f64)>, head: &MixtureVars, w: &[f64], m: &[f64], v: &[f64]) {
    out.extend(head.weights.iter().copied().zip(w.iter().copied()));
    out.extend(head.means.iter().copied().zip(m.iter().copied()));
    out.extend(head.variances.iter().copied().zip(v.iter().copied()));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::finite_diff_check;
    use crate::model::{Activation, ModelConfig};
    use rand::Rng as _;

    fn toy(seed: u64) -> (ModelParams, Vec<Vec<f64>>, Vec<LabelVector>) {
        let cfg = ModelConfig {
            input_dim: 3,
            encoder_hidden: vec![4],
            embed_dim: 3,
            mixture_dim: 2,
            num_classes: 2,
            mdn_hidden: vec![4, 3],
            activation: Activation::Tanh,
        };
        let params = ModelParams::init(&cfg, seed).unwrap();
        let mut r = crate::rng::seeded(seed + 100);
        let views = (0..4).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let labels = [[1, 0], [1, 0], [1, 1], [1, 1]].iter().map(|b| LabelVector::new(b.to_vec()).unwrap()).collect();
        (params, views, labels)
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let cfg = ContrastiveLossConfig::default();
        for seed in 0..3 {
            let (params, views, labels) = toy(seed);
            let r = finite_diff_check(
                &params.data,
                |t, v| Ok(record_total_loss(t, &params, v, &views, &labels, &cfg)?.0),
                1e-5,
            )
            .unwrap();
            assert!(r.max_relative_error < 1e-4, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn zero_lambda_reports_pcl_but_ignores_it() {
        let (params, views, labels) = toy(1);
        let cfg = ContrastiveLossConfig { lambda: 0.0, ..Default::default() };
        let mut tape = crate::grad::Tape::new();
        let vars = tape.leaves(&params.data);
        let (out, b) = record_total_loss(&mut tape, &params, &vars, &views, &labels, &cfg).unwrap();
        assert!(b.pcl > 0.0);
        assert_eq!(b.total, b.nll);
        assert_eq!(tape.value(out), b.nll);
    }

    #[test]
    fn classifier_weights_get_no_gradient() {
        let (params, views, labels) = toy(2);
        let mut tape = crate::grad::Tape::new();
        let vars = tape.leaves(&params.data);
        let (out, _) =
            record_total_loss(&mut tape, &params, &vars, &views, &labels, &ContrastiveLossConfig::default()).unwrap();
        let g = tape.backward(out).unwrap().collect(&vars);
        let cls = params.tensor_spec("classifier.weight").unwrap().range();
        assert!(g[cls].iter().all(|x| *x == 0.0));
    }
}
