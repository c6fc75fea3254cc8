//! Unfolded graph neural networks (APPNP, GPRGNN, ElasticGNN) written as
//! explicit solvers of their lower-level objectives, with cascaded
//! propagation and a graph domain adaptation training harness.
//!
//! Layout:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`graph`] | CSR matrices, graphs, normalized operators `A`, `L`, `Δ` |
//! | [`tensor`] | dense matrices and a reverse-mode tape |
//! | [`models`] | pre-processor, propagation families, cascade, checkpoints |
//! | [`objectives`] | lower-level objectives, MMD, the cascade inequality check |
//! | [`data`] | on-disk domain format, synthetic shifted pairs, splits |
//! | [`trainer`] | Adam, training loops, metrics, grid search, seed aggregation |

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod data;
pub mod graph;
pub mod models;
pub mod objectives;
pub mod tensor;
pub mod trainer;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty node mask")]
    EmptyMask,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("backward root must be a 1x1 node, got {0:?}")]
    NonScalarRoot((usize, usize)),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("missing file {0}")]
    MissingFile(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("constant list cannot be min-max normalized")]
    ConstantList,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
