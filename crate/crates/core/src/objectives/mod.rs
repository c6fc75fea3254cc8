//! Lower-level objectives solved by propagation, the upper-level training
//! loss, and the cascade inequality check.

pub mod lower;
pub mod mmd;
pub mod theorem;

pub use lower::{
    elastic_objective, gsd_objective, laplacian_quadratic, minmax_normalize, AnchorKind,
    EdgePenalty, LowerLevel, LowerObjectiveReport,
};
pub use mmd::{mmd, mmd_value, Bandwidth, MmdConfig};
pub use theorem::{check_cascade, theorem_check, TheoremReport, THEOREM_TOLERANCE};

use crate::tensor::{Tape, Var};
use crate::Result;

/// Cross-entropy over `mask` plus `xi · MMD²(source_emb, target_emb)`.
///
/// The discrepancy term is omitted entirely (no node on the tape) when
/// `target_emb` is `None` or `xi == 0`.
pub fn upper_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    mask: &[usize],
    source_emb: Var,
    target_emb: Option<Var>,
    xi: f64,
    cfg: &MmdConfig,
) -> Result<Var> {
    let ce = tape.softmax_cross_entropy(logits, labels, mask)?;
    match target_emb {
        Some(t) if xi != 0.0 => {
            let d = mmd(tape, source_emb, t, cfg)?;
            tape.add_scaled(ce, d, 1.0, xi)
        }
        _ => Ok(ce),
    }
}
