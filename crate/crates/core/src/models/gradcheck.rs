//! Finite-difference checks of the full source-plus-target training loss
//! for every variant with one cascade round.

use super::{ElasticParams, ModelSpec, PostMode, UgnnModel, Variant};
use crate::graph::{build_operators, CsrMatrix, Graph, GraphOperators, SparseOperator};
use crate::objectives::{upper_loss, Bandwidth, MmdConfig};
use crate::tensor::gradcheck::{check_params, GradCheckReport};
use crate::Result;

fn domain(shift: f64) -> Result<(GraphOperators, SparseOperator)> {
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3), (5, 2)];
    let ops = build_operators(&Graph::new(6, edges)?, true)?;
    let trip: Vec<(usize, usize, f64)> = (0..6)
        .flat_map(|r| {
            [
                (r, r % 4, 1.0 + r as f64 * 0.1 + shift),
                (r, (r + 2) % 4, -0.5 + shift),
            ]
        })
        .collect();
    Ok((ops, SparseOperator::new(CsrMatrix::from_triplets(6, 4, &trip)?)))
}

/// The model every pipeline check uses: `K = 4`, one cascade round.
pub fn gradcheck_spec(variant: Variant, post: PostMode) -> ModelSpec {
    ModelSpec {
        variant,
        k: 4,
        alpha: 0.2,
        cp_rounds: 1,
        hidden: vec![5],
        embedding_dim: 3,
        dropout: 0.0,
        post,
        elastic: ElasticParams {
            lambda1: 2.0,
            lambda2: 0.3,
            ..ElasticParams::default()
        },
        ..ModelSpec::default()
    }
}

/// Cross-entropy plus `0.5 · MMD` (fixed bandwidth) through every variant
/// and post-processor mode.
pub fn pipeline_suite(seed: u64, step: f64) -> Result<Vec<GradCheckReport>> {
    let (s_ops, s_feats) = domain(0.0)?;
    let (t_ops, t_feats) = domain(0.4)?;
    let labels = [0usize, 1, 2, 0, 1, 2];
    let mask = [0usize, 1, 2, 3];
    let mmd_cfg = MmdConfig {
        bandwidth: Bandwidth::Fixed(1.5),
        ..MmdConfig::default()
    };
    let mut reports = Vec::new();
    for variant in Variant::ALL {
        for post in [PostMode::SoftmaxOnly, PostMode::LinearThenSoftmax] {
            let mut model = UgnnModel::new(gradcheck_spec(variant, post), 4, 3, seed)?;
            let params = model.trainable_params();
            let template = model.clone();
            let report = check_params(
                &format!("{variant}_cp/{post:?}"),
                model.store_mut(),
                &params,
                &|tape, store| {
                    let mut local = template.clone();
                    *local.store_mut() = store.clone();
                    let s = local.forward(tape, &s_ops, &s_feats, false, 0)?;
                    let t = local.forward(tape, &t_ops, &t_feats, false, 0)?;
                    upper_loss(tape, s.logits, &labels, &mask, s.embedding, Some(t.embedding), 0.5, &mmd_cfg)
                },
                step,
            )?;
            reports.push(report);
        }
    }
    Ok(reports)
}
