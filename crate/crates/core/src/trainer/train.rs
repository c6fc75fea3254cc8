use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::metrics::{f1_scores, F1Scores};
use super::report::{config_hash, RunReport};
use crate::data::{split_source, DomainDataset, SplitSpec};
use crate::graph::{GraphOperators, SparseOperator};
use crate::models::{ModelSpec, UgnnModel};
use crate::objectives::{theorem_check, upper_loss, MmdConfig};
use crate::tensor::{DenseMatrix, Tape};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Weight of the MMD alignment term.
    pub xi: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub train_fraction: f64,
    /// Keep post-processor parameters fixed.
    pub freeze_pos: bool,
    pub mmd: MmdConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            weight_decay: 5e-4,
            xi: 0.0,
            max_epochs: 500,
            patience: 50,
            train_fraction: 0.8,
            freeze_pos: false,
            mmd: MmdConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.xi >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be > 0, weight_decay and xi >= 0: {}, {}, {}",
                self.learning_rate, self.weight_decay, self.xi
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// A domain with its graph operators and feature matrix built once.
#[derive(Debug, Clone)]
pub struct PreparedDomain {
    pub data: DomainDataset,
    pub ops: GraphOperators,
    pub features: SparseOperator,
}

impl PreparedDomain {
    pub fn new(data: DomainDataset, add_self_loops: bool) -> Result<Self> {
        Ok(Self {
            ops: data.operators(add_self_loops)?,
            features: data.feature_operator()?,
            data,
        })
    }

    pub fn name(&self) -> &str {
        &self.data.name
    }
}

/// splitmix64 of `a` combined with `b`.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Scores evaluation-mode predictions on `nodes` (all nodes when `None`).
pub fn evaluate(model: &UgnnModel, domain: &PreparedDomain, nodes: Option<&[usize]>) -> Result<F1Scores> {
    let logits = model.logits(&domain.ops, &domain.features)?;
    let pred = logits.argmax_rows();
    let labels = &domain.data.labels;
    let all: Vec<usize>;
    let nodes = match nodes {
        Some(n) => n,
        None => {
            all = domain.data.all_nodes();
            &all
        }
    };
    let truth: Vec<usize> = nodes.iter().map(|&v| labels[v]).collect();
    let pred: Vec<usize> = nodes.iter().map(|&v| pred[v]).collect();
    Ok(f1_scores(&truth, &pred, domain.data.class_count))
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    model: &'a ModelSpec,
    train: &'a TrainConfig,
    seed: u64,
    source: &'a str,
    target: &'a str,
}

/// Supervised training on `source` with MMD alignment towards `target`.
///
/// The returned model is the snapshot with the best source-validation
/// Micro-F1, ties going to the lower training loss; the report scores it
/// on every node of `target`. A tie with lower loss also resets patience.
pub fn train_source(
    mut model: UgnnModel,
    source: &PreparedDomain,
    target: &PreparedDomain,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(UgnnModel, RunReport)> {
    let started = Instant::now();
    cfg.validate()?;
    source.data.check_compatible(&target.data)?;
    if model.input_dim() != source.data.feature_dim || model.class_count() != source.data.class_count {
        return Err(Error::InvalidConfig(format!(
            "model is {} -> {}, data is {} -> {}",
            model.input_dim(),
            model.class_count(),
            source.data.feature_dim,
            source.data.class_count
        )));
    }
    let split = split_source(
        source.data.n_nodes(),
        &SplitSpec {
            train_fraction: cfg.train_fraction,
            seed,
        },
    )?;
    if split.train.is_empty() {
        return Err(Error::EmptyMask);
    }
    model.set_post_frozen(cfg.freeze_pos);
    let adam_cfg = cfg.adam();
    let mut adam = AdamState::new(model.store(), model.trainable_params());
    let labels = &source.data.labels;
    let val_nodes = if split.val.is_empty() { &split.train } else { &split.val };

    let mut train_loss = Vec::new();
    let mut val_micro = Vec::new();
    let mut best: Option<(usize, f64, f64, Vec<DenseMatrix>)> = None;
    for epoch in 0..cfg.max_epochs {
        let mut tape = Tape::new();
        let src = model.forward(&mut tape, &source.ops, &source.features, true, mix(seed, 2 * epoch as u64))?;
        let tgt = if cfg.xi != 0.0 {
            let out = model.forward(
                &mut tape,
                &target.ops,
                &target.features,
                true,
                mix(seed, 2 * epoch as u64 + 1),
            )?;
            Some(out.embedding)
        } else {
            None
        };
        let mmd_cfg = MmdConfig {
            seed: mix(cfg.mmd.seed ^ seed, epoch as u64),
            ..cfg.mmd.clone()
        };
        let loss = upper_loss(
            &mut tape,
            src.logits,
            labels,
            &split.train,
            src.embedding,
            tgt,
            cfg.xi,
            &mmd_cfg,
        )?;
        let loss_value = tape.value(loss).get(0, 0);
        if !loss_value.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: loss_value,
            });
        }
        let store = model.store_mut();
        store.zero_grad();
        tape.backward(loss, store)?;
        adam.step(store, &adam_cfg)?;
        train_loss.push(loss_value);

        let val = evaluate(&model, source, Some(val_nodes))?.micro_f1;
        val_micro.push(val);
        let improved = best
            .as_ref()
            .is_none_or(|(_, b, l, _)| val > *b || (val == *b && loss_value < *l));
        if improved {
            let snapshot = model.store().ids().map(|id| model.store().value(id).clone()).collect();
            best = Some((epoch, val, loss_value, snapshot));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_val, _, snapshot) = best.expect("at least one epoch");
    let ids: Vec<_> = model.store().ids().collect();
    for (id, value) in ids.into_iter().zip(snapshot) {
        model.store_mut().get_mut(id).value = value;
    }
    model.store_mut().zero_grad();

    let scores = evaluate(&model, target, None)?;
    let theorem = theorem_check(&model, &target.ops, &target.features)?;
    let mut notes = Vec::new();
    if !scores.absent_classes.is_empty() {
        notes.push(format!(
            "classes {:?} absent from target truth and prediction; scored 0",
            scores.absent_classes
        ));
    }
    if theorem.convention_only {
        notes.push("f_low evaluated at the diagnostic alpha (GPR coefficients are free)".into());
    }
    let echo = ConfigEcho {
        model: model.spec(),
        train: cfg,
        seed,
        source: source.name(),
        target: target.name(),
    };
    let report = RunReport {
        config: serde_json::to_value(&echo)?,
        config_hash: config_hash(&echo)?,
        seed,
        source: source.name().to_string(),
        target: target.name().to_string(),
        self_loops_added: target.ops.self_loops_added,
        epochs_run: train_loss.len(),
        best_epoch,
        early_stopping_patience: cfg.patience,
        max_epochs: cfg.max_epochs,
        train_loss,
        val_micro_f1: val_micro,
        best_val_micro_f1: best_val,
        target_macro_f1: scores.macro_f1,
        target_micro_f1: scores.micro_f1,
        f_low_transfer: theorem.f_transfer,
        f_low_cp: theorem.f_cp,
        theorem_holds: theorem.holds,
        f_low_convention_only: theorem.convention_only,
        notes,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Trains directly on the labelled target domain.
pub fn train_oracle(
    model: UgnnModel,
    target: &PreparedDomain,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(UgnnModel, RunReport)> {
    train_source(model, target, target, cfg, seed)
}

/// Oracle training with the post-processor copied from `source_model` and
/// held fixed.
pub fn train_oracle_frozen_pos(
    mut model: UgnnModel,
    source_model: &UgnnModel,
    target: &PreparedDomain,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(UgnnModel, RunReport)> {
    model.copy_post_from(source_model)?;
    let cfg = TrainConfig {
        freeze_pos: true,
        ..cfg.clone()
    };
    train_oracle(model, target, &cfg, seed)
}

/// Builds a model for `spec` on `source`'s dimensions and trains it.
pub fn run_once(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    source: &PreparedDomain,
    target: &PreparedDomain,
    seed: u64,
) -> Result<(UgnnModel, RunReport)> {
    let model = UgnnModel::new(
        spec.clone(),
        source.data.feature_dim,
        source.data.class_count,
        seed,
    )?;
    train_source(model, source, target, cfg, seed)
}
