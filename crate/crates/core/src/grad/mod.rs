//! Gradient engine, optimizer, and finite-difference verification.

mod optim;
mod tape;

pub use optim::{one_cycle_lr, AdamConfig, AdamState, OneCycle};
pub use tape::{sigmoid, Gradients, Op, Tape, Var};

use crate::error::Result;

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    pub max_relative_error: f64,
    /// Parameter index where the worst error occurred.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares reverse-mode gradients with central differences.
///
/// `loss_fn` records a scalar loss on the tape given leaf variables for
/// `params`. It is evaluated once for the analytic gradient and twice per
/// parameter for the numeric one, each time on a fresh tape. The relative
/// error of each entry is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(params: &[f64], loss_fn: F, step: f64) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves = tape.leaves(params);
    let out = loss_fn(&mut tape, &leaves)?;
    let analytic = tape.backward(out)?.collect(&leaves);

    let mut eval = |p: &[f64]| -> Result<f64> {
        tape.clear();
        let leaves = tape.leaves(p);
        let out = loss_fn(&mut tape, &leaves)?;
        Ok(tape.value(out))
    };
    let mut shifted = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        shifted[i] = params[i] + step;
        let up = eval(&shifted)?;
        shifted[i] = params[i] - step;
        let down = eval(&shifted)?;
        shifted[i] = params[i];
        numeric.push((up - down) / (2.0 * step));
    }

    let mut worst = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(FiniteDiffReport { max_relative_error: worst.0, worst_index: worst.1, analytic, numeric })
}
