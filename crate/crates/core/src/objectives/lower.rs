//! Lower-level objectives and their node/edge decomposition.
//!
//! Both objectives split into a per-node fidelity term `κ(h_v, x_v) ≥ 0`
//! with `κ(h, h) = 0`, a per-edge smoothing term, and a per-node term `η`.
//! `η` is only non-zero for isolated nodes of a graph built without
//! self-loops, where `L[v,v] = 1` has no edge to carry it.

use serde::{Deserialize, Serialize};

use crate::graph::GraphOperators;
use crate::tensor::DenseMatrix;
use crate::{Error, Result};

/// Penalty applied to each row of `ΔH` in the elastic objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EdgePenalty {
    /// `Σ_e ‖(ΔH)_e‖₂`; its dual projection is the row-norm clip.
    #[default]
    RowL2,
    /// `Σ_e ‖(ΔH)_e‖₁`; its dual projection is the entrywise clamp.
    EntrywiseL1,
}

impl EdgePenalty {
    pub fn of_row(self, row: &[f64]) -> f64 {
        match self {
            Self::RowL2 => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Self::EntrywiseL1 => row.iter().map(|v| v.abs()).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    /// Anchored at the pre-processor output.
    PreOutput,
    /// Anchored at the output of a previous propagation pass.
    CpAnchor,
}

/// A lower-level objective with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LowerLevel {
    /// `α‖H - X‖² + (1 - α) Tr(HᵀLH)`
    Gsd { alpha: f64 },
    /// `½‖H - X‖² + (λ₁/2) Tr(HᵀLH) + λ₂ Σ_e penalty((ΔH)_e)`
    Elastic {
        lambda1: f64,
        lambda2: f64,
        penalty: EdgePenalty,
    },
}

impl LowerLevel {
    pub fn evaluate(
        &self,
        h: &DenseMatrix,
        anchor: &DenseMatrix,
        ops: &GraphOperators,
        anchor_kind: AnchorKind,
    ) -> Result<LowerObjectiveReport> {
        let mut report = match *self {
            Self::Gsd { alpha } => gsd_objective(h, anchor, ops, alpha)?,
            Self::Elastic {
                lambda1,
                lambda2,
                penalty,
            } => elastic_objective(h, anchor, ops, lambda1, lambda2, penalty)?,
        };
        report.anchor_kind = anchor_kind;
        Ok(report)
    }

    pub fn value(&self, h: &DenseMatrix, anchor: &DenseMatrix, ops: &GraphOperators) -> Result<f64> {
        Ok(self.evaluate(h, anchor, ops, AnchorKind::PreOutput)?.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerObjectiveReport {
    pub objective: LowerLevel,
    /// Closed-form value (norm and trace form).
    pub value: f64,
    pub fidelity: f64,
    pub smoothing: f64,
    pub constraint: f64,
    pub anchor_kind: AnchorKind,
}

impl LowerObjectiveReport {
    pub fn decomposition_sum(&self) -> f64 {
        self.fidelity + self.smoothing + self.constraint
    }
}

fn check_shapes(h: &DenseMatrix, x: &DenseMatrix, ops: &GraphOperators) -> Result<()> {
    if h.shape() != x.shape() || h.rows() != ops.n_nodes() {
        return Err(Error::ShapeMismatch {
            op: "lower objective",
            left: h.shape(),
            right: x.shape(),
        });
    }
    Ok(())
}

/// `Tr(HᵀLH)` via one sparse product.
pub fn laplacian_quadratic(h: &DenseMatrix, ops: &GraphOperators) -> Result<f64> {
    let lh = ops.laplacian.matrix().spmm(h)?;
    h.dot(&lh)
}

struct NodeEdgeSums {
    fidelity: f64,
    edge_sq: f64,
    edge_penalty: f64,
    isolated_sq: f64,
}

fn node_edge_sums(
    h: &DenseMatrix,
    x: &DenseMatrix,
    ops: &GraphOperators,
    penalty: Option<EdgePenalty>,
) -> NodeEdgeSums {
    let fidelity = h
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let scale = ops.inv_sqrt_degrees();
    let mut edge_sq = 0.0;
    let mut edge_penalty = 0.0;
    let mut diff = vec![0.0; h.cols()];
    for &(u, v) in ops.edges() {
        for ((d, a), b) in diff.iter_mut().zip(h.row(u)).zip(h.row(v)) {
            *d = a * scale[u] - b * scale[v];
        }
        edge_sq += diff.iter().map(|d| d * d).sum::<f64>();
        if let Some(p) = penalty {
            edge_penalty += p.of_row(&diff);
        }
    }
    let isolated_sq = ops
        .isolated_nodes()
        .into_iter()
        .map(|v| h.row(v).iter().map(|a| a * a).sum::<f64>())
        .sum();
    NodeEdgeSums {
        fidelity,
        edge_sq,
        edge_penalty,
        isolated_sq,
    }
}

/// Graph signal denoising objective `α‖H - X‖² + (1 - α) Tr(HᵀLH)`.
pub fn gsd_objective(
    h: &DenseMatrix,
    anchor: &DenseMatrix,
    ops: &GraphOperators,
    alpha: f64,
) -> Result<LowerObjectiveReport> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside (0, 1]")));
    }
    check_shapes(h, anchor, ops)?;
    let value = alpha * h.sub(anchor)?.frobenius_sq() + (1.0 - alpha) * laplacian_quadratic(h, ops)?;
    let sums = node_edge_sums(h, anchor, ops, None);
    Ok(LowerObjectiveReport {
        objective: LowerLevel::Gsd { alpha },
        value,
        fidelity: alpha * sums.fidelity,
        smoothing: (1.0 - alpha) * sums.edge_sq,
        constraint: (1.0 - alpha) * sums.isolated_sq,
        anchor_kind: AnchorKind::PreOutput,
    })
}

/// Elastic objective with a Laplacian term and a penalty on `ΔH`.
pub fn elastic_objective(
    h: &DenseMatrix,
    anchor: &DenseMatrix,
    ops: &GraphOperators,
    lambda1: f64,
    lambda2: f64,
    penalty: EdgePenalty,
) -> Result<LowerObjectiveReport> {
    if lambda1 < 0.0 || lambda2 < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "elastic weights must be non-negative: {lambda1}, {lambda2}"
        )));
    }
    check_shapes(h, anchor, ops)?;
    let dh = ops.incidence.matrix().spmm(h)?;
    let penalty_sum: f64 = (0..dh.rows()).map(|e| penalty.of_row(dh.row(e))).sum();
    let value = 0.5 * h.sub(anchor)?.frobenius_sq()
        + 0.5 * lambda1 * laplacian_quadratic(h, ops)?
        + lambda2 * penalty_sum;
    let sums = node_edge_sums(h, anchor, ops, Some(penalty));
    Ok(LowerObjectiveReport {
        objective: LowerLevel::Elastic {
            lambda1,
            lambda2,
            penalty,
        },
        value,
        fidelity: 0.5 * sums.fidelity,
        smoothing: 0.5 * lambda1 * sums.edge_sq + lambda2 * sums.edge_penalty,
        constraint: 0.5 * lambda1 * sums.isolated_sq,
        anchor_kind: AnchorKind::PreOutput,
    })
}

/// `(v - min) / (max - min)` for every value.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.len() < 2 || !(max > min) {
        return Err(Error::ConstantList);
    }
    let range = max - min;
    Ok(values.iter().map(|v| (v - min) / range).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_operators, Graph};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        n: usize,
        d: usize,
        seed: u64,
        self_loops: bool,
    ) -> (GraphOperators, DenseMatrix, DenseMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random::<f64>() < 0.25 {
                    edges.push((u, v));
                }
            }
        }
        let ops = build_operators(&Graph::new(n, edges).unwrap(), self_loops).unwrap();
        let h = DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let x = DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        (ops, h, x)
    }

    /// `Tr(HᵀLH)` from a fully dense `L`.
    fn dense_trace(h: &DenseMatrix, ops: &GraphOperators) -> f64 {
        let l = ops.laplacian.matrix().to_dense();
        let mut total = 0.0;
        for c in 0..h.cols() {
            for i in 0..h.rows() {
                for j in 0..h.rows() {
                    total += h.get(i, c) * l.get(i, j) * h.get(j, c);
                }
            }
        }
        total
    }

    #[test]
    fn fidelity_vanishes_at_anchor() {
        let (ops, h, _) = random_instance(15, 3, 1, true);
        let r = gsd_objective(&h, &h, &ops, 0.3).unwrap();
        assert_eq!(r.fidelity, 0.0);
        assert!((r.value - 0.7 * dense_trace(&h, &ops)).abs() < 1e-9);
    }

    #[test]
    fn single_self_looped_node_has_no_smoothing() {
        let ops = build_operators(&Graph::new(1, []).unwrap(), true).unwrap();
        let h = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let r = gsd_objective(&h, &x, &ops, 0.4).unwrap();
        assert!((r.value - 0.4 * 5.0).abs() < 1e-15);
    }

    #[test]
    fn trace_form_equals_decomposition() {
        for seed in 0..20 {
            for &loops in &[true, false] {
                let (ops, h, x) = random_instance(25, 4, seed, loops);
                let r = gsd_objective(&h, &x, &ops, 0.2).unwrap();
                let oracle = 0.2 * h.sub(&x).unwrap().frobenius_sq() + 0.8 * dense_trace(&h, &ops);
                assert!((r.value - oracle).abs() < 1e-9);
                assert!((r.value - r.decomposition_sum()).abs() < 1e-9);
                for p in [EdgePenalty::RowL2, EdgePenalty::EntrywiseL1] {
                    let e = elastic_objective(&h, &x, &ops, 3.0, 0.7, p).unwrap();
                    assert!((e.value - e.decomposition_sum()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn elastic_dense_oracle() {
        let (ops, h, x) = random_instance(12, 3, 4, true);
        let delta = ops.incidence.matrix().to_dense();
        let dh = delta.matmul(&h).unwrap();
        let l1: f64 = dh.data().iter().map(|v| v.abs()).sum();
        let l21: f64 = (0..dh.rows())
            .map(|r| dh.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum();
        let base = 0.5 * h.sub(&x).unwrap().frobenius_sq() + 1.5 * dense_trace(&h, &ops);
        let e1 = elastic_objective(&h, &x, &ops, 3.0, 0.5, EdgePenalty::EntrywiseL1).unwrap();
        let e2 = elastic_objective(&h, &x, &ops, 3.0, 0.5, EdgePenalty::RowL2).unwrap();
        assert!((e1.value - (base + 0.5 * l1)).abs() < 1e-9);
        assert!((e2.value - (base + 0.5 * l21)).abs() < 1e-9);
    }

    #[test]
    fn elastic_without_penalty_reweights_gsd() {
        let (ops, h, x) = random_instance(10, 2, 8, true);
        let lambda1 = 4.0;
        let e = elastic_objective(&h, &x, &ops, lambda1, 0.0, EdgePenalty::RowL2).unwrap();
        // α = 1/(1+λ₁) gives α‖·‖² + (1-α)Tr = (2/(1+λ₁)) · elastic.
        let alpha = 1.0 / (1.0 + lambda1);
        let g = gsd_objective(&h, &x, &ops, alpha).unwrap();
        assert!((g.value - 2.0 * alpha * e.value).abs() < 1e-9);
    }

    #[test]
    fn elastic_zero_on_edgeless_anchor() {
        let ops = build_operators(&Graph::new(4, []).unwrap(), true).unwrap();
        let h = DenseMatrix::from_fn(4, 2, |i, j| (i + j) as f64);
        let e = elastic_objective(&h, &h, &ops, 3.0, 3.0, EdgePenalty::RowL2).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn alpha_and_shape_validation() {
        let (ops, h, x) = random_instance(5, 2, 2, true);
        assert!(gsd_objective(&h, &x, &ops, 0.0).is_err());
        assert!(gsd_objective(&h, &x, &ops, 1.5).is_err());
        let bad = DenseMatrix::zeros(5, 3);
        assert!(matches!(
            gsd_objective(&h, &bad, &ops, 0.5),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn minmax_examples() {
        let out = minmax_normalize(&[0.2, 0.4, 0.6]).unwrap();
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 0.5).abs() < 1e-15);
        assert_eq!(out[2], 1.0);
        assert!(matches!(minmax_normalize(&[1.0, 1.0]), Err(Error::ConstantList)));
        assert!(minmax_normalize(&[1.0]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn minmax_permutation_equivariant(values in proptest::collection::vec(-1e3f64..1e3, 2..20), seed in 0u64..1000) {
            proptest::prop_assume!(values.iter().any(|v| *v != values[0]));
            let mut perm: Vec<usize> = (0..values.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let shuffled: Vec<f64> = perm.iter().map(|&i| values[i]).collect();
            let a = minmax_normalize(&values).unwrap();
            let b = minmax_normalize(&shuffled).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                proptest::prop_assert_eq!(b[k], a[i]);
            }
            proptest::prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
