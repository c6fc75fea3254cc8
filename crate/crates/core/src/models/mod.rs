//! Pre-processor, propagation families, post-processor, and checkpoints.

mod checkpoint;
pub mod gradcheck;
mod model;
pub mod propagation;

pub use checkpoint::Checkpoint;
pub use model::{ForwardOutput, UgnnModel};
pub use propagation::{
    appnp_cp, appnp_propagate, cascade, elastic_cp, elastic_propagate, gpr_cp, gpr_propagate,
    ppr_coefficients, ElasticSolver, Propagator,
};

use serde::{Deserialize, Serialize};

use crate::objectives::{EdgePenalty, LowerLevel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Appnp,
    Gprgnn,
    Elastic,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Appnp, Variant::Gprgnn, Variant::Elastic];

    pub fn name(self) -> &'static str {
        match self {
            Self::Appnp => "appnp",
            Self::Gprgnn => "gprgnn",
            Self::Elastic => "elastic",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PostMode {
    /// Logits are the propagated embedding itself.
    #[default]
    SoftmaxOnly,
    /// A learnable affine map from the embedding to the logits.
    LinearThenSoftmax,
}

/// Which quantity bounds the dual variable of the elastic scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClipThreshold {
    /// The penalty weight `λ₂`.
    #[default]
    Lambda2,
    /// The Laplacian weight `λ₁`.
    Lambda1,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub clip: ClipThreshold,
    pub penalty: EdgePenalty,
    /// Primal step; `1/(1+λ₁)` when absent.
    pub step: Option<f64>,
    /// Dual step; `1/(2·step)` when absent.
    pub dual_step: Option<f64>,
}

impl Default for ElasticParams {
    fn default() -> Self {
        Self {
            lambda1: 3.0,
            lambda2: 3.0,
            clip: ClipThreshold::Lambda2,
            penalty: EdgePenalty::RowL2,
            step: None,
            dual_step: None,
        }
    }
}

impl ElasticParams {
    pub fn clip_threshold(&self) -> f64 {
        match self.clip {
            ClipThreshold::Lambda2 => self.lambda2,
            ClipThreshold::Lambda1 => self.lambda1,
            ClipThreshold::Value(t) => t,
        }
    }

    pub fn solver(&self) -> ElasticSolver {
        let step = self.step.unwrap_or(1.0 / (1.0 + self.lambda1));
        ElasticSolver {
            step,
            dual_step: self.dual_step.unwrap_or(1.0 / (2.0 * step)),
            clip: self.clip_threshold(),
            penalty: self.penalty,
        }
    }

    /// The objective the solver descends: the penalty weight is the clip
    /// threshold, since that is the radius of the dual ball.
    pub fn lower_level(&self) -> LowerLevel {
        LowerLevel::Elastic {
            lambda1: self.lambda1,
            lambda2: self.clip_threshold(),
            penalty: self.penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Propagation steps per pass.
    pub k: usize,
    /// Teleport probability; also the PPR initialization of GPR coefficients.
    pub alpha: f64,
    /// `α` at which GPRGNN outputs are scored against the denoising objective.
    pub diagnostic_alpha: f64,
    pub elastic: ElasticParams,
    /// Extra propagation passes; 0 is the vanilla model.
    pub cp_rounds: usize,
    pub hidden: Vec<usize>,
    /// Embedding width when the post-processor is linear.
    pub embedding_dim: usize,
    pub dropout: f64,
    pub post: PostMode,
    pub add_self_loops: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            variant: Variant::Appnp,
            k: 8,
            alpha: 0.1,
            diagnostic_alpha: 0.1,
            elastic: ElasticParams::default(),
            cp_rounds: 0,
            hidden: vec![128],
            embedding_dim: 64,
            dropout: 0.5,
            post: PostMode::SoftmaxOnly,
            add_self_loops: true,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if !(self.diagnostic_alpha > 0.0 && self.diagnostic_alpha <= 1.0) {
            return bad(format!("diagnostic_alpha {} outside (0, 1]", self.diagnostic_alpha));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.hidden.contains(&0) || self.embedding_dim == 0 {
            return bad("layer widths must be positive".into());
        }
        let e = &self.elastic;
        if !(e.lambda1 >= 0.0 && e.lambda2 >= 0.0 && e.clip_threshold() >= 0.0) {
            return bad(format!("elastic weights must be non-negative: {e:?}"));
        }
        let s = e.solver();
        if !(s.step > 0.0 && s.step <= 1.0 && s.dual_step > 0.0) {
            return bad(format!("elastic steps out of range: {s:?}"));
        }
        Ok(())
    }

    /// Objective used for diagnostics, and whether it is only a reporting
    /// convention (GPRGNN has no single static objective once `γ` is free).
    pub fn lower_level(&self) -> (LowerLevel, bool) {
        match self.variant {
            Variant::Appnp => (LowerLevel::Gsd { alpha: self.alpha }, false),
            Variant::Gprgnn => (
                LowerLevel::Gsd {
                    alpha: self.diagnostic_alpha,
                },
                true,
            ),
            Variant::Elastic => (self.elastic.lower_level(), false),
        }
    }
}
