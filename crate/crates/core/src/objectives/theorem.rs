//! The cascade inequality: re-running propagation anchored at its own
//! output never increases the lower-level objective.
//!
//! ```text
//! f_transfer = f(X̄,     anchor = X)      X̄     = prop(X)
//! f_cp       = f(X̄_cp,  anchor = X̄)      X̄_cp  = prop(X̄)
//! holds  ⇔  f_cp ≤ f_transfer + 1e-10
//! ```

use serde::{Deserialize, Serialize};

use super::{AnchorKind, LowerLevel, LowerObjectiveReport};
use crate::graph::{GraphOperators, SparseOperator};
use crate::models::{Propagator, UgnnModel};
use crate::tensor::DenseMatrix;
use crate::Result;

/// Absolute slack for roundoff.
pub const THEOREM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub objective: LowerLevel,
    pub f_transfer: f64,
    pub f_cp: f64,
    /// `f(X̄, anchor = X̄)`: the transferred embedding scored against itself.
    pub f_transfer_self_anchored: f64,
    pub holds: bool,
    /// The objective is a reporting convention rather than the one the
    /// propagation provably descends (GPRGNN with free coefficients).
    pub convention_only: bool,
    /// Objective at every iterate of the first pass, anchored at `X`.
    pub transfer_trajectory: Vec<f64>,
    /// Objective at every iterate of the cascaded pass, anchored at `X̄`.
    pub cp_trajectory: Vec<f64>,
    pub transfer: LowerObjectiveReport,
    pub cp: LowerObjectiveReport,
}

fn scored_trajectory(
    propagator: &Propagator,
    lower: &LowerLevel,
    ops: &GraphOperators,
    start: &DenseMatrix,
) -> Result<(DenseMatrix, Vec<f64>)> {
    let steps = propagator.trajectory(ops, start)?;
    let values = steps
        .iter()
        .map(|h| lower.value(h, start, ops))
        .collect::<Result<Vec<_>>>()?;
    let last = steps.into_iter().last().expect("trajectory includes the input");
    Ok((last, values))
}

/// Runs one pass and one cascaded pass from `pre` and compares objectives.
pub fn check_cascade(
    pre: &DenseMatrix,
    ops: &GraphOperators,
    propagator: &Propagator,
    lower: &LowerLevel,
) -> Result<TheoremReport> {
    let (transferred, transfer_trajectory) = scored_trajectory(propagator, lower, ops, pre)?;
    let (cascaded, cp_trajectory) = scored_trajectory(propagator, lower, ops, &transferred)?;
    let transfer = lower.evaluate(&transferred, pre, ops, AnchorKind::PreOutput)?;
    let cp = lower.evaluate(&cascaded, &transferred, ops, AnchorKind::CpAnchor)?;
    let f_transfer_self_anchored = lower.value(&transferred, &transferred, ops)?;
    Ok(TheoremReport {
        objective: *lower,
        f_transfer: transfer.value,
        f_cp: cp.value,
        f_transfer_self_anchored,
        holds: cp.value <= transfer.value + THEOREM_TOLERANCE,
        convention_only: matches!(propagator, Propagator::Gpr { .. }),
        transfer_trajectory,
        cp_trajectory,
        transfer,
        cp,
    })
}

/// The check for a trained model on a (target) domain.
pub fn theorem_check(
    model: &UgnnModel,
    ops: &GraphOperators,
    features: &SparseOperator,
) -> Result<TheoremReport> {
    let pre = model.pre_output(features)?;
    let (lower, convention) = model.lower_level();
    let mut report = check_cascade(&pre, ops, &model.propagator(), &lower)?;
    report.convention_only = convention;
    Ok(report)
}

/// `f(out_r, anchor = out_{r-1})` for `r = 0..=rounds`, where `out_{-1}`
/// is `pre` and `out_r` is one pass applied to `out_{r-1}`.
pub fn cascade_objectives(
    pre: &DenseMatrix,
    ops: &GraphOperators,
    propagator: &Propagator,
    lower: &LowerLevel,
    rounds: usize,
) -> Result<Vec<f64>> {
    let mut anchor = pre.clone();
    let mut values = Vec::with_capacity(rounds + 1);
    for _ in 0..=rounds {
        let out = propagator.apply(ops, &anchor)?;
        values.push(lower.value(&out, &anchor, ops)?);
        anchor = out;
    }
    Ok(values)
}
