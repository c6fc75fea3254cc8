//! Dynamic reverse-mode tape over a fixed primitive set.
//!
//! Every primitive appends one record holding its output value and whatever
//! context its backward rule needs. Records are only ever appended, so the
//! record order is a topological order and [`Tape::backward`] walks it in
//! exact reverse.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DenseMatrix;
use crate::graph::SparseOperator;
use crate::objectives::mmd;
use crate::{Error, Result};

/// Trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
}

impl Parameter {
    pub fn new(value: DenseMatrix) -> Self {
        let grad = DenseMatrix::zeros(value.rows(), value.cols());
        Self { value, grad }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix) -> ParamId {
        self.names.push(name.into());
        self.params.push(Parameter::new(value));
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &DenseMatrix {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &DenseMatrix {
        &self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }
}

/// Handle to a tape record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Spmm {
        op: SparseOperator,
        input: Var,
    },
    AddScaled {
        x: Var,
        y: Var,
        a: f64,
        b: f64,
    },
    AddRowBias {
        x: Var,
        bias: Var,
    },
    ScaleByEntry {
        x: Var,
        coeffs: Var,
        index: usize,
    },
    Relu(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    RowClip {
        x: Var,
        threshold: f64,
    },
    EntryClip {
        x: Var,
        threshold: f64,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize)>,
        probs: DenseMatrix,
    },
    Mmd {
        source: Var,
        target: Var,
        source_rows: Vec<usize>,
        target_rows: Vec<usize>,
        bandwidth: f64,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Record {
    value: DenseMatrix,
    op: Op,
}

/// Gradients of the backward root with respect to every tape record.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// `None` when the record does not influence the root.
    pub fn get(&self, var: Var) -> Option<&DenseMatrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, var: Var) -> &DenseMatrix {
        &self.records[var.0].value
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.records.push(Record { value, op });
        Var(self.records.len() - 1)
    }

    /// Input that is not a parameter. Its gradient is still reported by
    /// [`Gradients::get`].
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn spmm(&mut self, op: &SparseOperator, input: Var) -> Result<Var> {
        let value = op.matrix().spmm(self.value(input))?;
        Ok(self.push(
            value,
            Op::Spmm {
                op: op.clone(),
                input,
            },
        ))
    }

    /// `a·x + b·y`.
    pub fn add_scaled(&mut self, x: Var, y: Var, a: f64, b: f64) -> Result<Var> {
        let value = self.value(x).axpby(a, self.value(y), b)?;
        Ok(self.push(value, Op::AddScaled { x, y, a, b }))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        self.add_scaled(x, y, 1.0, 1.0)
    }

    /// Adds the `1 × cols` row vector `bias` to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                left: xv.shape(),
                right: bv.shape(),
            });
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddRowBias { x, bias }))
    }

    /// `coeffs[index] · x` where `coeffs` is a row vector.
    pub fn scale_by_entry(&mut self, x: Var, coeffs: Var, index: usize) -> Result<Var> {
        let cv = self.value(coeffs);
        if cv.rows() != 1 || index >= cv.cols() {
            return Err(Error::ShapeMismatch {
                op: "scale_by_entry",
                left: cv.shape(),
                right: (1, index + 1),
            });
        }
        let c = cv.get(0, index);
        let value = self.value(x).scale(c);
        Ok(self.push(value, Op::ScaleByEntry { x, coeffs, index }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    /// Inverted dropout. Evaluation mode and `rate == 0` return `x` itself.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep_scale = 1.0 / (1.0 - rate);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = DenseMatrix::from_vec(xv.rows(), xv.cols(), data)?;
        Ok(self.push(value, Op::Dropout { x, mask }))
    }

    /// Scales every row to norm `min(‖row‖, threshold)`. Zero rows and rows
    /// exactly on the boundary pass through unchanged.
    pub fn row_l2_clip(&mut self, x: Var, threshold: f64) -> Var {
        let mut value = self.value(x).clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > threshold {
                let s = threshold / norm;
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        self.push(value, Op::RowClip { x, threshold })
    }

    /// Clamps every entry to `[-threshold, threshold]`.
    pub fn entry_clip(&mut self, x: Var, threshold: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(-threshold, threshold));
        self.push(value, Op::EntryClip { x, threshold })
    }

    /// Mean over `mask` of `-log softmax(logits[v])[labels[v]]`.
    ///
    /// `labels` is indexed by node; only masked nodes are read.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        mask: &[usize],
    ) -> Result<Var> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let lv = self.value(logits);
        let classes = lv.cols();
        let mut targets = Vec::with_capacity(mask.len());
        for &node in mask {
            let label = *labels.get(node).ok_or(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: lv.shape(),
                right: (labels.len(), 1),
            })?;
            if node >= lv.rows() || label >= classes {
                return Err(Error::InvalidData(format!(
                    "node {node} with label {label} outside logits {:?}",
                    lv.shape()
                )));
            }
            targets.push((node, label));
        }
        let mut probs = DenseMatrix::zeros(targets.len(), classes);
        let mut loss = 0.0;
        for (r, &(node, label)) in targets.iter().enumerate() {
            let row = lv.row(node);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            loss += log_denom - (row[label] - max);
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - max).exp() / denom;
            }
        }
        let value = DenseMatrix::scalar(loss / targets.len() as f64);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            },
        ))
    }

    /// Biased squared MMD between the given rows of `source` and `target`
    /// under an RBF kernel of the given bandwidth. The bandwidth is a
    /// constant for differentiation.
    pub fn mmd(
        &mut self,
        source: Var,
        target: Var,
        source_rows: Vec<usize>,
        target_rows: Vec<usize>,
        bandwidth: f64,
    ) -> Result<Var> {
        let s = self.value(source).select_rows(&source_rows);
        let t = self.value(target).select_rows(&target_rows);
        let value = DenseMatrix::scalar(mmd::biased_mmd2(&s, &t, bandwidth)?);
        Ok(self.push(
            value,
            Op::Mmd {
                source,
                target,
                source_rows,
                target_rows,
                bandwidth,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// Reverse sweep from the scalar `root`. Parameter gradients are added
    /// to `store` (not overwritten).
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<Gradients> {
        let shape = self.value(root).shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            // Inputs always precede their record, so they live in `lower`.
            let (lower, upper) = grads.split_at_mut(idx);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            let grads = lower;
            let record = &self.records[idx];
            match &record.op {
                Op::Leaf => {}
                Op::Param(id) => store.get_mut(*id).grad.add_assign(g)?,
                Op::MatMul(a, b) => {
                    let da = g.matmul_transpose(self.value(*b))?;
                    let db = self.value(*a).transpose_matmul(g)?;
                    accumulate(grads, *a, da)?;
                    accumulate(grads, *b, db)?;
                }
                Op::Spmm { op, input } => {
                    let d = op.transposed().spmm(g)?;
                    accumulate(grads, *input, d)?;
                }
                Op::AddScaled { x, y, a, b } => {
                    accumulate(grads, *x, g.scale(*a))?;
                    accumulate(grads, *y, g.scale(*b))?;
                }
                Op::AddRowBias { x, bias } => {
                    let mut db = DenseMatrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in db.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *x, g.clone())?;
                    accumulate(grads, *bias, db)?;
                }
                Op::ScaleByEntry { x, coeffs, index } => {
                    let cv = self.value(*coeffs);
                    let mut dc = DenseMatrix::zeros(1, cv.cols());
                    dc.set(0, *index, g.dot(self.value(*x))?);
                    accumulate(grads, *x, g.scale(cv.get(0, *index)))?;
                    accumulate(grads, *coeffs, dc)?;
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                        .collect();
                    accumulate(grads, *x, DenseMatrix::from_vec(g.rows(), g.cols(), data)?)?;
                }
                Op::Dropout { x, mask } => {
                    let data = g.data().iter().zip(mask).map(|(d, m)| d * m).collect();
                    accumulate(grads, *x, DenseMatrix::from_vec(g.rows(), g.cols(), data)?)?;
                }
                Op::RowClip { x, threshold } => {
                    let xv = self.value(*x);
                    let mut d = g.clone();
                    for i in 0..xv.rows() {
                        let z = xv.row(i);
                        let norm_sq: f64 = z.iter().map(|v| v * v).sum();
                        let norm = norm_sq.sqrt();
                        if norm > *threshold {
                            // (t/‖z‖)(I - z zᵀ/‖z‖²) applied to the upstream row
                            let zg: f64 = z.iter().zip(g.row(i)).map(|(a, b)| a * b).sum();
                            let s = threshold / norm;
                            for ((o, &gi), &zi) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(z) {
                                *o = s * (gi - zi * zg / norm_sq);
                            }
                        }
                    }
                    accumulate(grads, *x, d)?;
                }
                Op::EntryClip { x, threshold } => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(d, v)| if v.abs() <= *threshold { *d } else { 0.0 })
                        .collect();
                    accumulate(grads, *x, DenseMatrix::from_vec(g.rows(), g.cols(), data)?)?;
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let lv = self.value(*logits);
                    let scale = g.get(0, 0) / targets.len() as f64;
                    let mut d = DenseMatrix::zeros(lv.rows(), lv.cols());
                    for (r, &(node, label)) in targets.iter().enumerate() {
                        let out = d.row_mut(node);
                        for (o, p) in out.iter_mut().zip(probs.row(r)) {
                            *o += scale * p;
                        }
                        out[label] -= scale;
                    }
                    accumulate(grads, *logits, d)?;
                }
                Op::Mmd {
                    source,
                    target,
                    source_rows,
                    target_rows,
                    bandwidth,
                } => {
                    let sv = self.value(*source);
                    let tv = self.value(*target);
                    let s = sv.select_rows(source_rows);
                    let t = tv.select_rows(target_rows);
                    let (ds, dt) = mmd::biased_mmd2_grad(&s, &t, *bandwidth)?;
                    let up = g.get(0, 0);
                    let mut full_s = DenseMatrix::zeros(sv.rows(), sv.cols());
                    for (r, &node) in source_rows.iter().enumerate() {
                        for (o, v) in full_s.row_mut(node).iter_mut().zip(ds.row(r)) {
                            *o += up * v;
                        }
                    }
                    let mut full_t = DenseMatrix::zeros(tv.rows(), tv.cols());
                    for (r, &node) in target_rows.iter().enumerate() {
                        for (o, v) in full_t.row_mut(node).iter_mut().zip(dt.row(r)) {
                            *o += up * v;
                        }
                    }
                    accumulate(grads, *source, full_s)?;
                    accumulate(grads, *target, full_t)?;
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(grads, *x, DenseMatrix::filled(r, c, g.get(0, 0)))?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], var: Var, g: DenseMatrix) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CsrMatrix;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn grad_of(tape: &Tape, root: Var, var: Var) -> DenseMatrix {
        tape.backward(root, &mut ParamStore::new())
            .unwrap()
            .get(var)
            .unwrap()
            .clone()
    }

    #[test]
    fn matmul_identity_and_scalar_chain_rule() {
        let mut t = Tape::new();
        let i = t.constant(DenseMatrix::identity(2));
        let b = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let c = t.matmul(i, b).unwrap();
        assert_eq!(t.value(c), t.value(b));
        let s = t.sum(c);
        assert_eq!(grad_of(&t, s, b), DenseMatrix::filled(2, 2, 1.0));

        let mut t = Tape::new();
        let a = t.constant(DenseMatrix::scalar(3.0));
        let b = t.constant(DenseMatrix::scalar(-2.5));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(grad_of(&t, c, a).get(0, 0), -2.5);
    }

    #[test]
    fn spmm_identity_and_symmetric_backward() {
        let mut t = Tape::new();
        let h = t.constant(m(&[&[1.0], &[2.0], &[3.0]]));
        let eye = SparseOperator::symmetric(CsrMatrix::identity(3));
        let y = t.spmm(&eye, h).unwrap();
        let w = t.constant(m(&[&[2.0]]));
        let z = t.matmul(y, w).unwrap();
        let s = t.sum(z);
        assert_eq!(grad_of(&t, s, h), DenseMatrix::filled(3, 1, 2.0));

        let trip = [(0, 1, 0.5), (1, 0, 0.5), (1, 2, 0.25), (2, 1, 0.25), (2, 2, 1.0)];
        let sym = SparseOperator::symmetric(CsrMatrix::from_triplets(3, 3, &trip).unwrap());
        let mut t = Tape::new();
        let h = t.constant(m(&[&[1.0], &[-1.0], &[2.0]]));
        let y = t.spmm(&sym, h).unwrap();
        let s = t.sum(y);
        let expected = sym.matrix().spmm(&DenseMatrix::filled(3, 1, 1.0)).unwrap();
        assert_eq!(grad_of(&t, s, h), expected);
    }

    #[test]
    fn add_scaled_trivial_cases() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[1.0, -2.0]]));
        let y = t.constant(m(&[&[5.0, 7.0]]));
        let keep = t.add_scaled(x, y, 1.0, 0.0).unwrap();
        assert_eq!(t.value(keep), t.value(x));
        let zero = t.add_scaled(x, y, 0.0, 0.0).unwrap();
        assert_eq!(t.value(zero), &DenseMatrix::zeros(1, 2));
        let mix = t.add_scaled(x, y, 2.0, -3.0).unwrap();
        let s = t.sum(mix);
        assert_eq!(grad_of(&t, s, x), DenseMatrix::filled(1, 2, 2.0));
        assert_eq!(grad_of(&t, s, y), DenseMatrix::filled(1, 2, -3.0));
    }

    #[test]
    fn relu_trivial_cases() {
        let mut t = Tape::new();
        let pos = t.constant(m(&[&[0.5, 2.0]]));
        let r = t.relu(pos);
        assert_eq!(t.value(r), t.value(pos));
        let neg = t.constant(m(&[&[-0.5, 0.0]]));
        let r = t.relu(neg);
        assert_eq!(t.value(r), &DenseMatrix::zeros(1, 2));
        let s = t.sum(r);
        assert_eq!(grad_of(&t, s, neg), DenseMatrix::zeros(1, 2));
    }

    #[test]
    fn dropout_identity_cases_and_survivor_rate() {
        let mut t = Tape::new();
        let x = t.constant(DenseMatrix::filled(4, 4, 1.5));
        assert_eq!(t.dropout(x, 0.0, 1, true).unwrap(), x);
        assert_eq!(t.dropout(x, 0.7, 1, false).unwrap(), x);
        assert!(t.dropout(x, 1.0, 1, true).is_err());

        let n = 100_000;
        let big = t.constant(DenseMatrix::filled(n, 1, 1.0));
        let d = t.dropout(big, 0.5, 42, true).unwrap();
        let survivors = t.value(d).data().iter().filter(|&&v| v != 0.0).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((survivors - 0.5 * n as f64).abs() < 3.0 * sigma, "{survivors}");
        assert!(t.value(d).data().iter().all(|&v| v == 0.0 || v == 2.0));
        let again = t.dropout(big, 0.5, 42, true).unwrap();
        assert_eq!(t.value(again), t.value(d));
    }

    #[test]
    fn row_clip_trivial_cases() {
        let mut t = Tape::new();
        let z = t.constant(m(&[&[1.2, -1.6], &[0.0, 0.0], &[0.3, 0.4]]));
        let big = t.row_l2_clip(z, 1e12);
        assert_eq!(t.value(big), t.value(z));
        let zero = t.row_l2_clip(z, 0.0);
        assert_eq!(t.value(zero), &DenseMatrix::zeros(3, 2));
        let half = t.row_l2_clip(z, 1.0);
        assert_eq!(t.value(half).row(0), &[0.6, -0.8]);
        assert_eq!(t.value(half).row(2), &[0.3, 0.4]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let logits = t.constant(DenseMatrix::filled(3, 4, 0.3));
        let ce = t.softmax_cross_entropy(logits, &[0, 1, 2], &[0, 1, 2]).unwrap();
        assert!((t.value(ce).get(0, 0) - 4f64.ln()).abs() < 1e-15);

        let logits = t.constant(m(&[&[800.0, 0.0, 0.0]]));
        let ce = t.softmax_cross_entropy(logits, &[0], &[0]).unwrap();
        assert_eq!(t.value(ce).get(0, 0), 0.0);
        assert!(matches!(t.softmax_cross_entropy(logits, &[0], &[]), Err(Error::EmptyMask)));

        let vals = DenseMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.7 * j as f64);
        let labels = [3usize, 0, 1, 2, 2, 1];
        let mask = [0usize, 2, 3, 5];
        let logits = t.constant(vals.clone());
        let ce = t.softmax_cross_entropy(logits, &labels, &mask).unwrap();
        let brute: f64 = mask
            .iter()
            .map(|&v| {
                let lse = vals.row(v).iter().map(|x| x.exp()).sum::<f64>().ln();
                lse - vals.get(v, labels[v])
            })
            .sum::<f64>()
            / mask.len() as f64;
        assert!((t.value(ce).get(0, 0) - brute).abs() < 1e-10);
        let g = grad_of(&t, ce, logits);
        assert_eq!(g.row(1), &[0.0; 4]);
    }

    #[test]
    fn fan_out_adds_and_backward_accumulates_into_params() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[1.0, 2.0]]));
        let y = t.add(x, x).unwrap();
        let s = t.sum(y);
        assert_eq!(grad_of(&t, s, x), DenseMatrix::filled(1, 2, 2.0));

        let mut store = ParamStore::new();
        let id = store.add("w", m(&[&[0.5, -1.0]]));
        let mut t = Tape::new();
        let w = t.param(&store, id);
        let r = t.relu(w);
        let s = t.sum(r);
        t.backward(s, &mut store).unwrap();
        let once = store.grad(id).clone();
        t.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(id), &once.scale(2.0));
        assert!(matches!(t.backward(w, &mut store), Err(Error::NonScalarRoot((1, 2)))));
    }
}
