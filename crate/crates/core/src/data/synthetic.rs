//! Two stochastic-block-model domains with class-conditional Gaussian
//! features. The target domain shifts every feature vector along one
//! random unit direction and rescales the block edge probabilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::graph::Graph;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub source_name: String,
    pub target_name: String,
    /// Nodes per domain.
    pub nodes: usize,
    /// Blocks, which are also the classes.
    pub blocks: usize,
    pub feature_dim: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Norm of each randomly drawn class mean.
    pub class_separation: f64,
    /// Per-entry standard deviation around the class mean.
    pub feature_noise: f64,
    /// Explicit class means (`blocks × feature_dim`); overrides the random draw.
    pub class_means: Option<Vec<Vec<f64>>>,
    /// Length of the target feature offset.
    pub offset: f64,
    /// Target inter-block probability is `p_inter · inter_scale`.
    pub inter_scale: f64,
    /// Target intra-block probability is `p_intra · intra_scale`.
    pub intra_scale: f64,
    pub seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            source_name: "source".into(),
            target_name: "target".into(),
            nodes: 400,
            blocks: 4,
            feature_dim: 16,
            p_intra: 0.05,
            p_inter: 0.01,
            class_separation: 1.0,
            feature_noise: 1.0,
            class_means: None,
            offset: 0.0,
            inter_scale: 1.0,
            intra_scale: 1.0,
            seed: 0,
        }
    }
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.blocks == 0 || self.nodes < self.blocks {
            return bad(format!("{} nodes cannot fill {} blocks", self.nodes, self.blocks));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        let probs = [
            self.p_intra,
            self.p_inter,
            self.p_intra * self.intra_scale,
            self.p_inter * self.inter_scale,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad(format!("edge probabilities {probs:?} outside [0, 1]"));
        }
        if !(self.feature_noise >= 0.0 && self.class_separation >= 0.0 && self.offset.is_finite()) {
            return bad("feature scales must be finite and non-negative".into());
        }
        if self.source_name == self.target_name {
            return bad("source and target names must differ".into());
        }
        if let Some(m) = &self.class_means {
            if m.len() != self.blocks || m.iter().any(|r| r.len() != self.feature_dim) {
                return bad(format!("class_means must be {} x {}", self.blocks, self.feature_dim));
            }
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn domain(
    cfg: &ShiftConfig,
    name: &str,
    means: &[Vec<f64>],
    shift: &[f64],
    p_intra: f64,
    p_inter: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DomainDataset> {
    let n = cfg.nodes;
    let labels: Vec<usize> = (0..n).map(|v| v * cfg.blocks / n).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { p_intra } else { p_inter };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let mut features = Vec::with_capacity(n * cfg.feature_dim);
    for (v, &c) in labels.iter().enumerate() {
        for j in 0..cfg.feature_dim {
            let noise: f64 = rng.sample(StandardNormal);
            features.push((v, j, means[c][j] + shift[j] + cfg.feature_noise * noise));
        }
    }
    DomainDataset::new(
        name,
        Graph::new(n, edges)?,
        features,
        labels,
        cfg.feature_dim,
        cfg.blocks,
    )
}

/// A source/target pair; a pure function of `cfg`.
pub fn generate_shifted_pair(cfg: &ShiftConfig) -> Result<(DomainDataset, DomainDataset)> {
    cfg.validate()?;
    let mut shared = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = match &cfg.class_means {
        Some(m) => m.clone(),
        None => (0..cfg.blocks)
            .map(|_| {
                unit_vector(&mut shared, cfg.feature_dim)
                    .into_iter()
                    .map(|x| x * cfg.class_separation)
                    .collect()
            })
            .collect(),
    };
    let direction: Vec<f64> = unit_vector(&mut shared, cfg.feature_dim)
        .into_iter()
        .map(|x| x * cfg.offset)
        .collect();

    let mut source_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    source_rng.set_stream(1);
    let mut target_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    target_rng.set_stream(2);
    let zero = vec![0.0; cfg.feature_dim];
    let source = domain(
        cfg,
        &cfg.source_name,
        &means,
        &zero,
        cfg.p_intra,
        cfg.p_inter,
        &mut source_rng,
    )?;
    let target = domain(
        cfg,
        &cfg.target_name,
        &means,
        &direction,
        cfg.p_intra * cfg.intra_scale,
        cfg.p_inter * cfg.inter_scale,
        &mut target_rng,
    )?;
    Ok((source, target))
}
