use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::propagation::{cascade, elastic_propagate, gpr_propagate, ppr_coefficients, Propagator};
use super::{ModelSpec, PostMode, Variant};
use crate::graph::{GraphOperators, SparseOperator};
use crate::objectives::LowerLevel;
use crate::tensor::{DenseMatrix, ParamId, ParamStore, Tape, Var};
use crate::{Error, Result};

/// Nodes recorded by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Pre-processor output `X`.
    pub pre: Var,
    /// Propagated embedding `X̄`.
    pub embedding: Var,
    pub logits: Var,
}

/// MLP pre-processor, propagation, and post-processor with their parameters.
#[derive(Debug, Clone)]
pub struct UgnnModel {
    spec: ModelSpec,
    input_dim: usize,
    class_count: usize,
    seed: u64,
    store: ParamStore,
    layers: Vec<(ParamId, ParamId)>,
    gamma: Option<ParamId>,
    post: Option<(ParamId, ParamId)>,
    post_frozen: bool,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl UgnnModel {
    pub fn new(spec: ModelSpec, input_dim: usize, class_count: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 || class_count == 0 {
            return Err(Error::InvalidConfig(format!(
                "input width {input_dim} and class count {class_count} must be positive"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let out_dim = match spec.post {
            PostMode::SoftmaxOnly => class_count,
            PostMode::LinearThenSoftmax => spec.embedding_dim,
        };
        let mut widths = vec![input_dim];
        widths.extend(&spec.hidden);
        widths.push(out_dim);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = store.add(format!("pre.{i}.weight"), glorot(w[0], w[1], &mut rng));
                let bias = store.add(format!("pre.{i}.bias"), DenseMatrix::zeros(1, w[1]));
                (weight, bias)
            })
            .collect();
        let gamma = (spec.variant == Variant::Gprgnn).then(|| {
            let g = ppr_coefficients(spec.alpha, spec.k);
            store.add("prop.gamma", DenseMatrix::from_vec(1, g.len(), g).expect("length"))
        });
        let post = (spec.post == PostMode::LinearThenSoftmax).then(|| {
            let w = store.add("pos.weight", glorot(out_dim, class_count, &mut rng));
            let b = store.add("pos.bias", DenseMatrix::zeros(1, class_count));
            (w, b)
        });
        Ok(Self {
            spec,
            input_dim,
            class_count,
            seed,
            store,
            layers,
            gamma,
            post,
            post_frozen: false,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// `(weight, bias)` of each pre-processor layer.
    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn gamma(&self) -> Option<ParamId> {
        self.gamma
    }

    pub fn post_params(&self) -> Option<(ParamId, ParamId)> {
        self.post
    }

    pub fn post_frozen(&self) -> bool {
        self.post_frozen
    }

    pub fn set_post_frozen(&mut self, frozen: bool) {
        self.post_frozen = frozen;
    }

    /// Copies post-processor parameters from `other`.
    pub fn copy_post_from(&mut self, other: &UgnnModel) -> Result<()> {
        match (self.post, other.post) {
            (None, None) => Ok(()),
            (Some((w, b)), Some((ow, ob))) => {
                for (dst, src) in [(w, ow), (b, ob)] {
                    let value = other.store.value(src).clone();
                    if value.shape() != self.store.value(dst).shape() {
                        return Err(Error::ShapeMismatch {
                            op: "copy_post_from",
                            left: self.store.value(dst).shape(),
                            right: value.shape(),
                        });
                    }
                    self.store.get_mut(dst).value = value;
                }
                Ok(())
            }
            _ => Err(Error::InvalidConfig("post-processor modes differ".into())),
        }
    }

    /// Parameters the optimizer updates.
    pub fn trainable_params(&self) -> Vec<ParamId> {
        let frozen: Vec<ParamId> = match (self.post, self.post_frozen) {
            (Some((w, b)), true) => vec![w, b],
            _ => Vec::new(),
        };
        self.store.ids().filter(|id| !frozen.contains(id)).collect()
    }

    /// The diagnostic lower-level objective and whether it is a convention.
    pub fn lower_level(&self) -> (LowerLevel, bool) {
        self.spec.lower_level()
    }

    /// One propagation pass with the current parameters, detached.
    pub fn propagator(&self) -> Propagator {
        match self.spec.variant {
            Variant::Appnp => Propagator::Appnp {
                alpha: self.spec.alpha,
                k: self.spec.k,
            },
            Variant::Gprgnn => Propagator::Gpr {
                gamma: self
                    .store
                    .value(self.gamma.expect("gprgnn model has gamma"))
                    .data()
                    .to_vec(),
            },
            Variant::Elastic => Propagator::Elastic {
                solver: self.spec.elastic.solver(),
                k: self.spec.k,
            },
        }
    }

    /// `p_pre(X̂)`: sparse first layer, relu and dropout between layers.
    pub fn preprocess(
        &self,
        tape: &mut Tape,
        features: &SparseOperator,
        training: bool,
        dropout_seed: u64,
    ) -> Result<Var> {
        if features.shape().1 != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "preprocess",
                left: features.shape(),
                right: (self.input_dim, self.store.value(self.layers[0].0).cols()),
            });
        }
        let mut h = None;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(&self.store, w);
            let bv = tape.param(&self.store, b);
            let lin = match h {
                None => tape.spmm(features, wv)?,
                Some(prev) => {
                    let act = tape.relu(prev);
                    let dropped = tape.dropout(
                        act,
                        self.spec.dropout,
                        dropout_seed.wrapping_add(i as u64),
                        training,
                    )?;
                    tape.matmul(dropped, wv)?
                }
            };
            h = Some(tape.add_row_bias(lin, bv)?);
        }
        Ok(h.expect("at least one layer"))
    }

    /// Vanilla pass followed by `cp_rounds` cascaded passes.
    pub fn propagate(&self, tape: &mut Tape, ops: &GraphOperators, x: Var) -> Result<Var> {
        let rounds = self.spec.cp_rounds;
        match self.spec.variant {
            Variant::Appnp => {
                let (alpha, k) = (self.spec.alpha, self.spec.k);
                cascade(tape, x, rounds, &mut |t, h| {
                    super::appnp_propagate(t, &ops.adjacency, h, alpha, k)
                })
            }
            Variant::Gprgnn => {
                let gamma = tape.param(&self.store, self.gamma.expect("gprgnn model has gamma"));
                cascade(tape, x, rounds, &mut |t, h| gpr_propagate(t, &ops.adjacency, h, gamma))
            }
            Variant::Elastic => {
                let solver = self.spec.elastic.solver();
                let k = self.spec.k;
                cascade(tape, x, rounds, &mut |t, h| elastic_propagate(t, ops, h, &solver, k))
            }
        }
    }

    pub fn postprocess(&self, tape: &mut Tape, embedding: Var) -> Result<Var> {
        match self.post {
            None => Ok(embedding),
            Some((w, b)) => {
                let wv = tape.param(&self.store, w);
                let bv = tape.param(&self.store, b);
                let lin = tape.matmul(embedding, wv)?;
                tape.add_row_bias(lin, bv)
            }
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        ops: &GraphOperators,
        features: &SparseOperator,
        training: bool,
        dropout_seed: u64,
    ) -> Result<ForwardOutput> {
        if features.shape().0 != ops.n_nodes() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: features.shape(),
                right: (ops.n_nodes(), ops.n_nodes()),
            });
        }
        let pre = self.preprocess(tape, features, training, dropout_seed)?;
        let embedding = self.propagate(tape, ops, pre)?;
        let logits = self.postprocess(tape, embedding)?;
        Ok(ForwardOutput {
            pre,
            embedding,
            logits,
        })
    }

    fn eval_values(
        &self,
        ops: &GraphOperators,
        features: &SparseOperator,
        pick: impl Fn(&ForwardOutput) -> Var,
    ) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, ops, features, false, 0)?;
        Ok(tape.value(pick(&out)).clone())
    }

    /// Evaluation-mode embedding `X̄`.
    pub fn extract_embedding(&self, ops: &GraphOperators, features: &SparseOperator) -> Result<DenseMatrix> {
        self.eval_values(ops, features, |o| o.embedding)
    }

    /// Evaluation-mode pre-processor output.
    pub fn pre_output(&self, features: &SparseOperator) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let pre = self.preprocess(&mut tape, features, false, 0)?;
        Ok(tape.value(pre).clone())
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, ops: &GraphOperators, features: &SparseOperator) -> Result<DenseMatrix> {
        self.eval_values(ops, features, |o| o.logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_operators, CsrMatrix, Graph};
    use crate::models::{appnp_cp, gpr_cp, ElasticParams};

    fn fixture() -> (GraphOperators, SparseOperator) {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3), (5, 2)];
        let ops = build_operators(&Graph::new(6, edges).unwrap(), true).unwrap();
        let trip: Vec<(usize, usize, f64)> = (0..6)
            .flat_map(|r| [(r, r % 4, 1.0 + r as f64 * 0.1), (r, (r + 2) % 4, -0.5)])
            .collect();
        let feats = SparseOperator::new(CsrMatrix::from_triplets(6, 4, &trip).unwrap());
        (ops, feats)
    }

    fn spec(variant: Variant, cp_rounds: usize) -> ModelSpec {
        ModelSpec {
            variant,
            k: 4,
            alpha: 0.2,
            cp_rounds,
            hidden: vec![5],
            dropout: 0.0,
            elastic: ElasticParams {
                lambda1: 2.0,
                lambda2: 0.3,
                ..ElasticParams::default()
            },
            ..ModelSpec::default()
        }
    }

    #[test]
    fn identity_pipeline() {
        let (ops, feats) = fixture();
        let mut s = spec(Variant::Appnp, 0);
        s.alpha = 1.0;
        s.hidden = vec![];
        let mut model = UgnnModel::new(s, 4, 4, 1).unwrap();
        let (w, _) = model.layers()[0];
        model.store_mut().get_mut(w).value = DenseMatrix::identity(4);
        let logits = model.logits(&ops, &feats).unwrap();
        assert_eq!(logits, feats.matrix().to_dense());
    }

    #[test]
    fn rejects_width_mismatch_and_bad_spec() {
        let (ops, feats) = fixture();
        let model = UgnnModel::new(spec(Variant::Appnp, 0), 3, 2, 0).unwrap();
        assert!(model.extract_embedding(&ops, &feats).is_err());
        let mut s = spec(Variant::Appnp, 0);
        s.alpha = 0.0;
        assert!(UgnnModel::new(s, 4, 2, 0).is_err());
    }

    #[test]
    fn embedding_is_deterministic_and_cp_changes_it() {
        let (ops, feats) = fixture();
        let vanilla = UgnnModel::new(spec(Variant::Appnp, 0), 4, 3, 7).unwrap();
        let cp = UgnnModel::new(spec(Variant::Appnp, 1), 4, 3, 7).unwrap();
        let a = vanilla.extract_embedding(&ops, &feats).unwrap();
        assert_eq!(a, vanilla.extract_embedding(&ops, &feats).unwrap());
        assert_ne!(a, cp.extract_embedding(&ops, &feats).unwrap());
    }

    #[test]
    fn model_cp_matches_hand_written() {
        let (ops, feats) = fixture();
        let model = UgnnModel::new(spec(Variant::Appnp, 1), 4, 3, 2).unwrap();
        let pre = model.pre_output(&feats).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(pre);
        let h = appnp_cp(&mut tape, &ops.adjacency, x, 0.2, 4).unwrap();
        assert_eq!(tape.value(h), &model.extract_embedding(&ops, &feats).unwrap());

        let model = UgnnModel::new(spec(Variant::Gprgnn, 1), 4, 3, 2).unwrap();
        let pre = model.pre_output(&feats).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(pre);
        let g = tape.param(model.store(), model.gamma().unwrap());
        let h = gpr_cp(&mut tape, &ops.adjacency, x, g).unwrap();
        assert_eq!(tape.value(h), &model.extract_embedding(&ops, &feats).unwrap());
    }

    #[test]
    fn frozen_post_is_not_trainable() {
        let mut s = spec(Variant::Appnp, 0);
        let model = UgnnModel::new(s.clone(), 4, 3, 0).unwrap();
        let mut frozen = model.clone();
        frozen.set_post_frozen(true);
        assert_eq!(model.trainable_params(), frozen.trainable_params());

        s.post = PostMode::LinearThenSoftmax;
        let mut model = UgnnModel::new(s, 4, 3, 0).unwrap();
        let all = model.trainable_params().len();
        model.set_post_frozen(true);
        assert_eq!(model.trainable_params().len(), all - 2);
    }
}
