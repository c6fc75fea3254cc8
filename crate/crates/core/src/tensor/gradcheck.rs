//! Central finite-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DenseMatrix, ParamId, ParamStore, Tape, Var};
use crate::graph::{build_operators, CsrMatrix, Graph, SparseOperator};
use crate::objectives::mmd;
use crate::Result;

/// Step used by every check unless overridden.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    /// `‖analytic - numeric‖ / max(‖analytic‖, ‖numeric‖)` over checked
    /// entries, worst over inputs.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub checked_entries: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.rel_error.is_finite() && self.rel_error < tolerance
    }
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    let max_abs = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let rel = if denom < 1e-300 { diff } else { diff / denom };
    (rel, max_abs)
}

/// Checks the gradient of a scalar built from constant inputs.
///
/// `skip(input, entry)` excludes entries sitting in a kink neighbourhood.
pub fn check_inputs(
    name: &str,
    inputs: &[DenseMatrix],
    build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    step: f64,
    skip: &dyn Fn(usize, usize) -> bool,
) -> Result<GradCheckReport> {
    check_inputs_against(name, inputs, build, build, step, skip)
}

/// Like [`check_inputs`], but the analytic gradient comes from `analytic`
/// while finite differences evaluate `build`. Used to confirm that a wrong
/// backward rule is caught.
pub fn check_inputs_against(
    name: &str,
    inputs: &[DenseMatrix],
    analytic: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    step: f64,
    skip: &dyn Fn(usize, usize) -> bool,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
    let root = analytic(&mut tape, &vars)?;
    let mut scratch = ParamStore::new();
    let grads = tape.backward(root, &mut scratch)?;

    let eval = |values: &[DenseMatrix]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = values.iter().map(|m| t.constant(m.clone())).collect();
        let r = build(&mut t, &vs)?;
        Ok(t.value(r).get(0, 0))
    };

    let mut worst = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut checked = 0;
    let mut work = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let zero = DenseMatrix::zeros(input.rows(), input.cols());
        let analytic_full = grads.get(vars[k]).unwrap_or(&zero);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for e in 0..input.len() {
            if skip(k, e) {
                continue;
            }
            let orig = input.data()[e];
            work[k].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[k].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[k].data_mut()[e] = orig;
            analytic.push(analytic_full.data()[e]);
            numeric.push((plus - minus) / (2.0 * step));
        }
        checked += analytic.len();
        let (rel, abs) = rel_error(&analytic, &numeric);
        worst = worst.max(rel);
        worst_abs = worst_abs.max(abs);
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        rel_error: worst,
        max_abs_error: worst_abs,
        checked_entries: checked,
    })
}

/// Checks the parameter gradients of a loss built from `store`.
///
/// Only the listed parameters are perturbed. Existing gradients in `store`
/// are cleared.
pub fn check_params(
    name: &str,
    store: &mut ParamStore,
    params: &[ParamId],
    loss: &dyn Fn(&mut Tape, &ParamStore) -> Result<Var>,
    step: f64,
) -> Result<GradCheckReport> {
    store.zero_grad();
    let mut tape = Tape::new();
    let root = loss(&mut tape, store)?;
    tape.backward(root, store)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let r = loss(&mut t, s)?;
        Ok(t.value(r).get(0, 0))
    };

    let mut worst = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut checked = 0;
    for &id in params {
        let analytic: Vec<f64> = store.grad(id).data().to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for e in 0..analytic.len() {
            let orig = store.value(id).data()[e];
            store.get_mut(id).value.data_mut()[e] = orig + step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[e] = orig - step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[e] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        checked += analytic.len();
        let (rel, abs) = rel_error(&analytic, &numeric);
        worst = worst.max(rel);
        worst_abs = worst_abs.max(abs);
    }
    store.zero_grad();
    Ok(GradCheckReport {
        name: name.to_string(),
        rel_error: worst,
        max_abs_error: worst_abs,
        checked_entries: checked,
    })
}

/// Distance from a kink below which entries are not checked.
pub const KINK_MARGIN: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `sum(x · w)` for a fixed random `w`, so every output entry carries a
/// distinct upstream weight.
fn weighted_sum(tape: &mut Tape, x: Var, w: &DenseMatrix) -> Result<Var> {
    let w = tape.constant(w.clone());
    let y = tape.matmul(x, w)?;
    Ok(tape.sum(y))
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
type Skip = Box<dyn Fn(usize, usize) -> bool>;

/// Finite-difference checks of every tape primitive on random inputs.
///
/// With `inject_fault`, the relu check differentiates an identity in place
/// of relu, which the check must flag.
pub fn primitive_suite(seed: u64, step: f64, inject_fault: bool) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 12;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random::<f64>() < 0.3 {
                edges.push((u, v));
            }
        }
    }
    let ops = build_operators(&Graph::new(n, edges)?, true)?;
    let trip: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|r| [(r, r % 5, 1.0 + 0.1 * r as f64), (r, (3 * r + 1) % 5, -0.7)])
        .collect();
    let rect = SparseOperator::new(CsrMatrix::from_triplets(n, 5, &trip)?);
    let rect_t = rect.transposed_operator();

    let w3 = random(&mut rng, 3, 1);
    let w4 = random(&mut rng, 4, 1);
    let w5 = random(&mut rng, 5, 1);
    let a = random(&mut rng, 5, 4);
    let b = random(&mut rng, 4, 3);
    let h = random(&mut rng, n, 4);
    let x = random(&mut rng, 6, 4);
    let y = random(&mut rng, 6, 4);
    let bias = random(&mut rng, 1, 4);
    let coeffs = random(&mut rng, 1, 3);
    let z = DenseMatrix::from_fn(6, 4, |_, _| rng.random_range(-2.0..2.0));
    let logits = DenseMatrix::from_fn(6, 4, |_, _| rng.random_range(-3.0..3.0));
    let src = random(&mut rng, 7, 3);
    let tgt = DenseMatrix::from_fn(5, 3, |_, _| rng.random_range(0.0..2.0));
    let band = mmd::median_heuristic(&src, &tgt);
    let labels = [0usize, 3, 1, 2, 2, 0];
    let mask = [0usize, 1, 3, 4];
    let clip_t = 0.8;
    let relu_skip = x.clone();
    let row_norms: Vec<f64> = (0..z.rows())
        .map(|i| z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let z_entries = z.clone();

    let none = || -> Skip { Box::new(|_, _| false) };
    let mut cases: Vec<(&str, Vec<DenseMatrix>, Build, Skip)> = Vec::new();
    {
        let w = w3.clone();
        cases.push((
            "matmul",
            vec![a, b],
            Box::new(move |t, v| {
                let c = t.matmul(v[0], v[1])?;
                weighted_sum(t, c, &w)
            }),
            none(),
        ));
    }
    {
        let w = w4.clone();
        let ops = ops.clone();
        cases.push((
            "spmm_symmetric",
            vec![h.clone()],
            Box::new(move |t, v| {
                let c = t.spmm(&ops.adjacency, v[0])?;
                weighted_sum(t, c, &w)
            }),
            none(),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "spmm_rectangular",
            vec![random(&mut rng, 5, 4)],
            Box::new(move |t, v| {
                let c = t.spmm(&rect, v[0])?;
                weighted_sum(t, c, &w)
            }),
            none(),
        ));
    }
    {
        let w = w5.clone();
        cases.push((
            "spmm_transposed",
            vec![random(&mut rng, n, 5)],
            Box::new(move |t, v| {
                let c = t.spmm(&rect_t, v[0])?;
                weighted_sum(t, c, &w)
            }),
            none(),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "add_scaled",
            vec![x.clone(), y.clone()],
            Box::new(move |t, v| {
                let c = t.add_scaled(v[0], v[1], 0.7, -1.3)?;
                weighted_sum(t, c, &w)
            }),
            none(),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "add_row_bias",
            vec![x.clone(), bias],
            Box::new(move |t, v| {
                let c = t.add_row_bias(v[0], v[1])?;
                weighted_sum(t, c, &w)
            }),
            none(),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "scale_by_entry",
            vec![x.clone(), coeffs],
            Box::new(move |t, v| {
                let c = t.scale_by_entry(v[0], v[1], 2)?;
                weighted_sum(t, c, &w)
            }),
            none(),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "relu",
            vec![x.clone()],
            Box::new(move |t, v| {
                let c = t.relu(v[0]);
                weighted_sum(t, c, &w)
            }),
            Box::new(move |_, e| relu_skip.data()[e].abs() < KINK_MARGIN),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "dropout",
            vec![x.clone()],
            Box::new(move |t, v| {
                let c = t.dropout(v[0], 0.5, 17, true)?;
                weighted_sum(t, c, &w)
            }),
            none(),
        ));
    }
    {
        let w = w4.clone();
        let cols = z.cols();
        cases.push((
            "row_l2_clip",
            vec![z.clone()],
            Box::new(move |t, v| {
                let c = t.row_l2_clip(v[0], clip_t);
                weighted_sum(t, c, &w)
            }),
            Box::new(move |_, e| (row_norms[e / cols] - clip_t).abs() < KINK_MARGIN),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "entry_clip",
            vec![z],
            Box::new(move |t, v| {
                let c = t.entry_clip(v[0], clip_t);
                weighted_sum(t, c, &w)
            }),
            Box::new(move |_, e| (z_entries.data()[e].abs() - clip_t).abs() < KINK_MARGIN),
        ));
    }
    cases.push((
        "softmax_cross_entropy",
        vec![logits],
        Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels, &mask)),
        none(),
    ));
    cases.push((
        "mmd",
        vec![src, tgt],
        Box::new(move |t, v| t.mmd(v[0], v[1], (0..7).collect(), vec![0, 2, 3, 4], band)),
        none(),
    ));
    cases.push((
        "sum_with_fan_out",
        vec![x],
        Box::new(|t, v| {
            let c = t.add_scaled(v[0], v[0], 2.0, -0.5)?;
            Ok(t.sum(c))
        }),
        none(),
    ));

    cases
        .iter()
        .map(|(name, inputs, build, skip)| {
            if inject_fault && *name == "relu" {
                let w = w4.clone();
                let wrong = move |t: &mut Tape, v: &[Var]| weighted_sum(t, v[0], &w);
                check_inputs_against(name, inputs, &wrong, build.as_ref(), step, skip.as_ref())
            } else {
                check_inputs(name, inputs, build.as_ref(), step, skip.as_ref())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        for seed in 0..3 {
            for r in primitive_suite(seed, DEFAULT_STEP, false).unwrap() {
                assert!(r.passes(1e-6), "{r:?}");
                assert!(r.checked_entries > 0, "{r:?}");
            }
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let reports = primitive_suite(0, DEFAULT_STEP, true).unwrap();
        let relu = reports.iter().find(|r| r.name == "relu").unwrap();
        assert!(!relu.passes(1e-5), "{relu:?}");
        assert!(reports.iter().filter(|r| r.name != "relu").all(|r| r.passes(1e-6)));
    }
}
