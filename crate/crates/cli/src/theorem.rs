//! Randomized sweep of the cascade inequality and the per-round
//! monotonicity of repeated cascades.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ugnn_core::graph::{build_operators, Graph, GraphOperators};
use ugnn_core::models::{ppr_coefficients, ElasticSolver, Propagator, Variant};
use ugnn_core::objectives::theorem::cascade_objectives;
use ugnn_core::objectives::{check_cascade, EdgePenalty, LowerLevel, THEOREM_TOLERANCE};
use ugnn_core::tensor::DenseMatrix;

use crate::config::TheoremConfig;
use crate::Result;

/// A random graph, input, and propagation for one trial.
#[derive(Debug, Clone)]
pub struct Instance {
    pub ops: GraphOperators,
    pub x: DenseMatrix,
    pub propagator: Propagator,
    pub lower: LowerLevel,
    pub n_edges: usize,
}

/// Graph of 2 to `max_nodes` nodes with a random average degree, self
/// loops on or off, inputs at a random scale, and random hyperparameters.
/// GPRGNN uses the personalized-PageRank coefficients of its `α`.
pub fn instance(variant: Variant, instance_seed: u64, max_nodes: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
    let n = rng.random_range(2..=max_nodes.max(2));
    let degree = rng.random_range(1.0..12.0);
    let p = (degree / n as f64).min(1.0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let n_edges = edges.len();
    let loops = rng.random_bool(0.5);
    let ops = build_operators(&Graph::new(n, edges)?, loops)?;
    let d = rng.random_range(1..8);
    let scale = rng.random_range(0.1..10.0);
    let x = DenseMatrix::from_fn(n, d, |_, _| scale * rng.random_range(-1.0..1.0));
    let k = rng.random_range(1..=16);
    let alpha: f64 = rng.random_range(0.01..1.0);
    let (propagator, lower) = match variant {
        Variant::Appnp => (Propagator::Appnp { alpha, k }, LowerLevel::Gsd { alpha }),
        Variant::Gprgnn => (
            Propagator::Gpr {
                gamma: ppr_coefficients(alpha, k),
            },
            LowerLevel::Gsd { alpha },
        ),
        Variant::Elastic => {
            let lambda1 = rng.random_range(0.1..10.0);
            let lambda2 = rng.random_range(0.0..2.0);
            let penalty = if rng.random_bool(0.5) {
                EdgePenalty::RowL2
            } else {
                EdgePenalty::EntrywiseL1
            };
            (
                Propagator::Elastic {
                    solver: ElasticSolver::with_defaults(lambda1, lambda2, penalty),
                    k,
                },
                LowerLevel::Elastic {
                    lambda1,
                    lambda2,
                    penalty,
                },
            )
        }
    };
    Ok(Instance {
        ops,
        x,
        propagator,
        lower,
        n_edges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub variant: Variant,
    pub trial: usize,
    pub instance_seed: u64,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub f_transfer: f64,
    pub f_cp: f64,
    pub holds: bool,
    /// Anchored objectives of cascade rounds `0..=cascade_rounds`.
    pub rounds: Vec<f64>,
    pub rounds_hold: bool,
    pub convention_only: bool,
    pub injected: bool,
}

impl TrialRow {
    pub fn passes(&self) -> bool {
        self.holds && self.rounds_hold
    }
}

/// Instance seeds for `variant`: one stream per variant drawn from the
/// base seed, or the replay seed alone.
pub fn instance_seeds(cfg: &TheoremConfig, variant: Variant) -> Vec<u64> {
    if let Some(s) = cfg.replay {
        return vec![s];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(Variant::ALL.iter().position(|&v| v == variant).unwrap_or(0) as u64);
    (0..cfg.trials).map(|_| rng.random()).collect()
}

pub fn run_trial(variant: Variant, trial: usize, instance_seed: u64, cfg: &TheoremConfig) -> Result<TrialRow> {
    let inst = instance(variant, instance_seed, cfg.max_nodes)?;
    let report = check_cascade(&inst.x, &inst.ops, &inst.propagator, &inst.lower)?;
    let rounds = cascade_objectives(&inst.x, &inst.ops, &inst.propagator, &inst.lower, cfg.cascade_rounds)?;
    let rounds_hold = rounds.windows(2).all(|w| w[1] <= w[0] + THEOREM_TOLERANCE);
    Ok(TrialRow {
        variant,
        trial,
        instance_seed,
        n_nodes: inst.ops.n_nodes(),
        n_edges: inst.n_edges,
        f_transfer: report.f_transfer,
        f_cp: report.f_cp,
        holds: report.holds,
        rounds,
        rounds_hold,
        convention_only: report.convention_only,
        injected: false,
    })
}

/// Every trial of every configured variant, in order.
pub fn sweep(cfg: &TheoremConfig) -> Result<Vec<TrialRow>> {
    let mut rows = Vec::new();
    for &variant in &cfg.variants {
        for (trial, seed) in instance_seeds(cfg, variant).into_iter().enumerate() {
            rows.push(run_trial(variant, trial, seed, cfg)?);
        }
    }
    if cfg.inject_violation {
        if let Some(first) = rows.first_mut() {
            first.f_cp = first.f_transfer + 1.0;
            first.holds = false;
            first.injected = true;
        }
    }
    Ok(rows)
}
