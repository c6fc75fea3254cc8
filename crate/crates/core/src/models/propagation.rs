//! Message passing schemes of the three unfolded families and their
//! cascaded continuations.
//!
//! A cascaded pass re-runs the same scheme with the previous output as both
//! the starting point and the new fidelity anchor (and, for the elastic
//! scheme, a zeroed dual variable). `cascade` expresses this generically;
//! the `*_cp` functions spell the two-stage schemes out step by step.

use serde::{Deserialize, Serialize};

use crate::graph::{GraphOperators, SparseOperator};
use crate::objectives::EdgePenalty;
use crate::tensor::{DenseMatrix, Tape, Var};
use crate::{Error, Result};

/// Called with `H⁽⁰⁾, H⁽¹⁾, …, H⁽ᴷ⁾` of one pass.
pub type StepObserver<'a> = &'a mut dyn FnMut(&DenseMatrix);

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha {alpha} outside (0, 1]")))
    }
}

fn appnp_steps(
    tape: &mut Tape,
    adjacency: &SparseOperator,
    start: Var,
    anchor: Var,
    alpha: f64,
    k: usize,
    mut observer: Option<StepObserver<'_>>,
) -> Result<Var> {
    let mut h = start;
    if let Some(obs) = observer.as_mut() {
        obs(tape.value(h));
    }
    for _ in 0..k {
        let ah = tape.spmm(adjacency, h)?;
        h = tape.add_scaled(ah, anchor, 1.0 - alpha, alpha)?;
        if let Some(obs) = observer.as_mut() {
            obs(tape.value(h));
        }
    }
    Ok(h)
}

/// `H⁽ᵏ⁺¹⁾ = (1 - α) A H⁽ᵏ⁾ + α X` for `K` steps from `H⁽⁰⁾ = X`.
pub fn appnp_propagate(
    tape: &mut Tape,
    adjacency: &SparseOperator,
    x: Var,
    alpha: f64,
    k: usize,
) -> Result<Var> {
    check_alpha(alpha)?;
    appnp_steps(tape, adjacency, x, x, alpha, k, None)
}

/// APPNP followed by `K` more steps anchored at `H⁽ᴷ⁾`; returns `H⁽²ᴷ⁾`.
pub fn appnp_cp(
    tape: &mut Tape,
    adjacency: &SparseOperator,
    x: Var,
    alpha: f64,
    k: usize,
) -> Result<Var> {
    check_alpha(alpha)?;
    if k == 0 {
        return Err(Error::InvalidConfig("cascaded propagation needs K >= 1".into()));
    }
    let mut h = x;
    for _ in 0..k {
        let ah = tape.spmm(adjacency, h)?;
        h = tape.add_scaled(ah, x, 1.0 - alpha, alpha)?;
    }
    let anchor = h;
    for _ in 0..k {
        let ah = tape.spmm(adjacency, h)?;
        h = tape.add_scaled(ah, anchor, 1.0 - alpha, alpha)?;
    }
    Ok(h)
}

/// `Σₖ γₖ Aᵏ X` by Horner's rule; `gamma` is a `1 × (K+1)` row.
pub fn gpr_propagate(tape: &mut Tape, adjacency: &SparseOperator, x: Var, gamma: Var) -> Result<Var> {
    let len = tape.value(gamma).cols();
    if tape.value(gamma).rows() != 1 || len == 0 {
        return Err(Error::ShapeMismatch {
            op: "gpr_propagate",
            left: tape.value(gamma).shape(),
            right: (1, len.max(1)),
        });
    }
    let k = len - 1;
    let mut acc = tape.scale_by_entry(x, gamma, k)?;
    for j in (0..k).rev() {
        let a_acc = tape.spmm(adjacency, acc)?;
        let term = tape.scale_by_entry(x, gamma, j)?;
        acc = tape.add(a_acc, term)?;
    }
    Ok(acc)
}

/// Two generalized-PageRank passes sharing `γ`.
pub fn gpr_cp(tape: &mut Tape, adjacency: &SparseOperator, x: Var, gamma: Var) -> Result<Var> {
    let first = gpr_propagate(tape, adjacency, x, gamma)?;
    gpr_propagate(tape, adjacency, first, gamma)
}

/// `γₖ = α(1-α)ᵏ` for `k < K` and `γ_K = (1-α)ᴷ`: the coefficients under
/// which the generalized-PageRank polynomial equals `K` APPNP steps.
pub fn ppr_coefficients(alpha: f64, k: usize) -> Vec<f64> {
    let mut gamma: Vec<f64> = (0..k).map(|j| alpha * (1.0 - alpha).powi(j as i32)).collect();
    gamma.push((1.0 - alpha).powi(k as i32));
    gamma
}

/// Step sizes and dual projection of the elastic predictor-corrector scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticSolver {
    /// Primal step `γ`; also the fidelity weight of the predictor.
    pub step: f64,
    /// Dual step `β`.
    pub dual_step: f64,
    /// Radius of the dual projection.
    pub clip: f64,
    pub penalty: EdgePenalty,
}

impl ElasticSolver {
    /// `γ = 1/(1+λ₁)`, `β = 1/(2γ)`.
    pub fn with_defaults(lambda1: f64, clip: f64, penalty: EdgePenalty) -> Self {
        let step = 1.0 / (1.0 + lambda1);
        Self {
            step,
            dual_step: 1.0 / (2.0 * step),
            clip,
            penalty,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 1.0) || !(self.dual_step > 0.0) || !(self.clip >= 0.0) {
            return Err(Error::InvalidConfig(format!("invalid elastic solver {self:?}")));
        }
        Ok(())
    }
}

fn elastic_steps(
    tape: &mut Tape,
    ops: &GraphOperators,
    start: Var,
    anchor: Var,
    solver: &ElasticSolver,
    k: usize,
    mut observer: Option<StepObserver<'_>>,
) -> Result<Var> {
    solver.validate()?;
    let gamma = solver.step;
    let incidence = &ops.incidence;
    let incidence_t = incidence.transposed_operator();
    let width = tape.value(start).cols();
    let mut z = tape.constant(DenseMatrix::zeros(ops.edges().len(), width));
    let mut h = start;
    if let Some(obs) = observer.as_mut() {
        obs(tape.value(h));
    }
    for _ in 0..k {
        // predictor
        let ah = tape.spmm(&ops.adjacency, h)?;
        let y = tape.add_scaled(anchor, ah, gamma, 1.0 - gamma)?;
        // corrector with the current dual variable
        let dtz = tape.spmm(&incidence_t, z)?;
        let h_bar = tape.add_scaled(y, dtz, 1.0, -gamma)?;
        // dual ascent and projection
        let dh = tape.spmm(incidence, h_bar)?;
        let z_bar = tape.add_scaled(z, dh, 1.0, solver.dual_step)?;
        z = match solver.penalty {
            EdgePenalty::RowL2 => tape.row_l2_clip(z_bar, solver.clip),
            EdgePenalty::EntrywiseL1 => tape.entry_clip(z_bar, solver.clip),
        };
        // final corrector
        let dtz = tape.spmm(&incidence_t, z)?;
        h = tape.add_scaled(y, dtz, 1.0, -gamma)?;
        if let Some(obs) = observer.as_mut() {
            obs(tape.value(h));
        }
    }
    Ok(h)
}

/// `K` predictor-corrector iterations from `H⁽⁰⁾ = X`, `Z⁽⁰⁾ = 0`.
pub fn elastic_propagate(
    tape: &mut Tape,
    ops: &GraphOperators,
    x: Var,
    solver: &ElasticSolver,
    k: usize,
) -> Result<Var> {
    elastic_steps(tape, ops, x, x, solver, k, None)
}

/// Elastic pass followed by `K` iterations anchored at `H⁽ᴷ⁾` with the dual
/// variable reset to zero.
pub fn elastic_cp(
    tape: &mut Tape,
    ops: &GraphOperators,
    x: Var,
    solver: &ElasticSolver,
    k: usize,
) -> Result<Var> {
    if k == 0 {
        return Err(Error::InvalidConfig("cascaded propagation needs K >= 1".into()));
    }
    let first = elastic_steps(tape, ops, x, x, solver, k, None)?;
    elastic_steps(tape, ops, first, first, solver, k, None)
}

/// Applies `propagate` once, then `rounds` more times, each time feeding the
/// previous output in as the new input and anchor.
pub fn cascade(
    tape: &mut Tape,
    x: Var,
    rounds: usize,
    propagate: &mut dyn FnMut(&mut Tape, Var) -> Result<Var>,
) -> Result<Var> {
    let mut out = propagate(tape, x)?;
    for _ in 0..rounds {
        out = propagate(tape, out)?;
    }
    Ok(out)
}

/// One propagation pass with fixed (non-learnable) hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Propagator {
    Appnp { alpha: f64, k: usize },
    Gpr { gamma: Vec<f64> },
    Elastic { solver: ElasticSolver, k: usize },
}

impl Propagator {
    /// One pass anchored at its input. `observer` sees every iterate; the
    /// generalized-PageRank polynomial only reports its input and output.
    pub fn run(
        &self,
        tape: &mut Tape,
        ops: &GraphOperators,
        x: Var,
        mut observer: Option<StepObserver<'_>>,
    ) -> Result<Var> {
        match self {
            Self::Appnp { alpha, k } => {
                check_alpha(*alpha)?;
                appnp_steps(tape, &ops.adjacency, x, x, *alpha, *k, observer)
            }
            Self::Gpr { gamma } => {
                if let Some(obs) = observer.as_mut() {
                    obs(tape.value(x));
                }
                let g = tape.constant(DenseMatrix::from_vec(1, gamma.len(), gamma.clone())?);
                let out = gpr_propagate(tape, &ops.adjacency, x, g)?;
                if let Some(obs) = observer.as_mut() {
                    obs(tape.value(out));
                }
                Ok(out)
            }
            Self::Elastic { solver, k } => elastic_steps(tape, ops, x, x, solver, *k, observer),
        }
    }

    /// One pass on a plain matrix.
    pub fn apply(&self, ops: &GraphOperators, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = self.run(&mut tape, ops, v, None)?;
        Ok(tape.value(out).clone())
    }

    /// One pass on a plain matrix, returning every reported iterate.
    pub fn trajectory(&self, ops: &GraphOperators, x: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
        let mut steps = Vec::new();
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        self.run(&mut tape, ops, v, Some(&mut |h: &DenseMatrix| steps.push(h.clone())))?;
        Ok(steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_operators, Graph};
    use crate::objectives::gsd_objective;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ops(n: usize, p: f64, seed: u64) -> GraphOperators {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        build_operators(&Graph::new(n, edges).unwrap(), true).unwrap()
    }

    fn random_features(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn run(f: impl FnOnce(&mut Tape, Var) -> Result<Var>, x: &DenseMatrix) -> DenseMatrix {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = f(&mut tape, v).unwrap();
        tape.value(out).clone()
    }

    /// Dense Gaussian elimination with partial pivoting; `A` is square.
    fn dense_solve(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let n = a.rows();
        let mut m = a.clone();
        let mut rhs = b.clone();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| m.get(i, col).abs().total_cmp(&m.get(j, col).abs()))
                .unwrap();
            for j in 0..n {
                let t = m.get(col, j);
                m.set(col, j, m.get(piv, j));
                m.set(piv, j, t);
            }
            for j in 0..rhs.cols() {
                let t = rhs.get(col, j);
                rhs.set(col, j, rhs.get(piv, j));
                rhs.set(piv, j, t);
            }
            for i in (col + 1)..n {
                let f = m.get(i, col) / m.get(col, col);
                for j in col..n {
                    m.set(i, j, m.get(i, j) - f * m.get(col, j));
                }
                for j in 0..rhs.cols() {
                    rhs.set(i, j, rhs.get(i, j) - f * rhs.get(col, j));
                }
            }
        }
        let mut x = DenseMatrix::zeros(n, rhs.cols());
        for j in 0..rhs.cols() {
            for i in (0..n).rev() {
                let s: f64 = ((i + 1)..n).map(|k| m.get(i, k) * x.get(k, j)).sum();
                x.set(i, j, (rhs.get(i, j) - s) / m.get(i, i));
            }
        }
        x
    }

    #[test]
    fn appnp_trivial_cases() {
        let ops = random_ops(10, 0.3, 1);
        let x = random_features(10, 3, 2);
        let a = &ops.adjacency;
        assert_eq!(run(|t, v| appnp_propagate(t, a, v, 1.0, 5), &x), x);
        assert_eq!(run(|t, v| appnp_propagate(t, a, v, 0.3, 0), &x), x);
        assert_eq!(run(|t, v| appnp_cp(t, a, v, 1.0, 3), &x), x);
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        assert!(appnp_propagate(&mut tape, a, v, 0.0, 3).is_err());
        assert!(appnp_cp(&mut tape, a, v, 0.5, 0).is_err());
    }

    #[test]
    fn appnp_cp_single_node_fixed_point() {
        let ops = build_operators(&Graph::new(1, []).unwrap(), true).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.5, -2.0]]).unwrap();
        assert_eq!(run(|t, v| appnp_cp(t, &ops.adjacency, v, 0.2, 4), &x), x);
    }

    #[test]
    fn appnp_converges_to_dense_fixed_point() {
        let ops = random_ops(10, 0.3, 3);
        let x = random_features(10, 2, 4);
        let alpha = 0.1;
        let out = run(|t, v| appnp_propagate(t, &ops.adjacency, v, alpha, 64), &x);
        let a = ops.adjacency.matrix().to_dense();
        let system = DenseMatrix::identity(10).axpby(1.0, &a, -(1.0 - alpha)).unwrap();
        let fixed = dense_solve(&system, &x).scale(alpha);
        assert!(out.sub(&fixed).unwrap().frobenius() < 1e-2);
        let out = run(|t, v| appnp_propagate(t, &ops.adjacency, v, alpha, 400), &x);
        assert!(out.sub(&fixed).unwrap().frobenius() < 1e-12);
    }

    #[test]
    fn appnp_steps_descend_gsd() {
        let ops = random_ops(20, 0.2, 5);
        let x = random_features(20, 3, 6);
        let prop = Propagator::Appnp { alpha: 0.15, k: 30 };
        let steps = prop.trajectory(&ops, &x).unwrap();
        assert_eq!(steps.len(), 31);
        let values: Vec<f64> = steps
            .iter()
            .map(|h| gsd_objective(h, &x, &ops, 0.15).unwrap().value)
            .collect();
        for w in values.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn gpr_trivial_coefficients() {
        let ops = random_ops(8, 0.4, 7);
        let x = random_features(8, 2, 8);
        let a = &ops.adjacency;
        let with_gamma = |g: Vec<f64>, cp: bool| {
            let mut tape = Tape::new();
            let v = tape.constant(x.clone());
            let gv = tape.constant(DenseMatrix::from_vec(1, g.len(), g).unwrap());
            let out = if cp {
                gpr_cp(&mut tape, a, v, gv).unwrap()
            } else {
                gpr_propagate(&mut tape, a, v, gv).unwrap()
            };
            tape.value(out).clone()
        };
        assert_eq!(with_gamma(vec![1.0, 0.0, 0.0, 0.0], false), x);
        assert_eq!(with_gamma(vec![1.0, 0.0, 0.0, 0.0], true), x);
        let ax = a.matrix().spmm(&x).unwrap();
        assert_eq!(with_gamma(vec![0.0, 1.0, 0.0], false), ax);
        assert_eq!(with_gamma(vec![0.0, 1.0, 0.0], true), a.matrix().spmm(&ax).unwrap());
    }

    #[test]
    fn gpr_matches_dense_powers() {
        let ops = random_ops(8, 0.4, 9);
        let x = random_features(8, 3, 10);
        let gamma = vec![0.3, -0.2, 0.5, 0.1, 0.7];
        let a = ops.adjacency.matrix().to_dense();
        let mut power = x.clone();
        let mut expected = x.scale(gamma[0]);
        for g in &gamma[1..] {
            power = a.matmul(&power).unwrap();
            expected = expected.axpby(1.0, &power, *g).unwrap();
        }
        let got = Propagator::Gpr { gamma: gamma.clone() }.apply(&ops, &x).unwrap();
        assert!(got.max_abs_diff(&expected).unwrap() < 1e-10);

        let twice = Propagator::Gpr { gamma: gamma.clone() }.apply(&ops, &got).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let gv = tape.constant(DenseMatrix::from_vec(1, 5, gamma).unwrap());
        let cp = gpr_cp(&mut tape, &ops.adjacency, v, gv).unwrap();
        assert_eq!(tape.value(cp), &twice);
    }

    #[test]
    fn ppr_coefficients_reproduce_appnp() {
        for seed in 0..5 {
            let ops = random_ops(15, 0.25, seed);
            let x = random_features(15, 4, seed + 100);
            for &alpha in &[0.1, 0.2, 0.5] {
                let k = 8;
                let appnp = Propagator::Appnp { alpha, k }.apply(&ops, &x).unwrap();
                let gpr = Propagator::Gpr {
                    gamma: ppr_coefficients(alpha, k),
                }
                .apply(&ops, &x)
                .unwrap();
                assert!(appnp.max_abs_diff(&gpr).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn elastic_without_dual_reduces_to_appnp() {
        let ops = random_ops(12, 0.3, 11);
        let x = random_features(12, 3, 12);
        let solver = ElasticSolver::with_defaults(3.0, 0.0, EdgePenalty::RowL2);
        let alpha = solver.step;
        let e = run(|t, v| elastic_propagate(t, &ops, v, &solver, 6), &x);
        let a = run(|t, v| appnp_propagate(t, &ops.adjacency, v, alpha, 6), &x);
        assert!(e.max_abs_diff(&a).unwrap() < 1e-14);
        let e = run(|t, v| elastic_cp(t, &ops, v, &solver, 6), &x);
        let a = run(|t, v| appnp_cp(t, &ops.adjacency, v, alpha, 6), &x);
        assert!(e.max_abs_diff(&a).unwrap() < 1e-14);
        assert_eq!(run(|t, v| elastic_propagate(t, &ops, v, &solver, 0), &x), x);
    }

    #[test]
    fn elastic_cp_two_node_hand_unrolled() {
        // Path 0-1 with self-loops: A = [[½, ½], [½, ½]], Δ = [[1/√2, -1/√2]].
        let ops = build_operators(&Graph::new(2, [(0, 1)]).unwrap(), true).unwrap();
        let x = DenseMatrix::from_rows(&[vec![2.0], vec![-1.0]]).unwrap();
        let solver = ElasticSolver::with_defaults(1.0, 0.4, EdgePenalty::RowL2);
        let (g, b, t) = (solver.step, solver.dual_step, solver.clip);
        let r = 1.0 / 2f64.sqrt();

        // One iteration of the scheme on scalars (h0, h1) with dual z.
        let iterate = |h: [f64; 2], anchor: [f64; 2], z: f64| -> ([f64; 2], f64) {
            let mean = 0.5 * (h[0] + h[1]);
            let y = [g * anchor[0] + (1.0 - g) * mean, g * anchor[1] + (1.0 - g) * mean];
            let hb = [y[0] - g * r * z, y[1] + g * r * z];
            let zb = z + b * (r * hb[0] - r * hb[1]);
            let zc = if zb.abs() > t { t * zb.signum() } else { zb };
            ([y[0] - g * r * zc, y[1] + g * r * zc], zc)
        };
        let (h1, _) = iterate([2.0, -1.0], [2.0, -1.0], 0.0);
        let (h2, _) = iterate(h1, h1, 0.0);

        let got = run(|tp, v| elastic_cp(tp, &ops, v, &solver, 1), &x);
        assert!((got.get(0, 0) - h2[0]).abs() < 1e-14);
        assert!((got.get(1, 0) - h2[1]).abs() < 1e-14);
        // Symmetric input about zero mean stays antisymmetric.
        let sym = DenseMatrix::from_rows(&[vec![1.5], vec![-1.5]]).unwrap();
        let out = run(|tp, v| elastic_cp(tp, &ops, v, &solver, 1), &sym);
        assert!((out.get(0, 0) + out.get(1, 0)).abs() < 1e-14);
    }

    #[test]
    fn cascade_matches_hand_written_cp() {
        let ops = random_ops(14, 0.3, 13);
        let x = random_features(14, 3, 14);
        let (alpha, k) = (0.2, 5);
        let generic = run(
            |t, v| cascade(t, v, 1, &mut |t, h| appnp_propagate(t, &ops.adjacency, h, alpha, k)),
            &x,
        );
        assert_eq!(generic, run(|t, v| appnp_cp(t, &ops.adjacency, v, alpha, k), &x));

        let solver = ElasticSolver::with_defaults(3.0, 0.5, EdgePenalty::RowL2);
        let generic = run(
            |t, v| cascade(t, v, 1, &mut |t, h| elastic_propagate(t, &ops, h, &solver, k)),
            &x,
        );
        assert_eq!(generic, run(|t, v| elastic_cp(t, &ops, v, &solver, k), &x));

        let vanilla = run(
            |t, v| cascade(t, v, 0, &mut |t, h| appnp_propagate(t, &ops.adjacency, h, alpha, k)),
            &x,
        );
        assert_eq!(vanilla, run(|t, v| appnp_propagate(t, &ops.adjacency, v, alpha, k), &x));
    }
}
