//! Ablation arms, ξ sweeps, and lower-level objective tables.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ugnn_core::data::{generate_shifted_pair, ShiftConfig};
use ugnn_core::models::{Checkpoint, ModelSpec, UgnnModel, Variant};
use ugnn_core::objectives::{minmax_normalize, theorem_check};
use ugnn_core::trainer::{
    grid_search, run_seeds, train_source, Grid, GridPoint, PreparedDomain, SeedSummary, TrainConfig,
};

use crate::config::{AblationConfig, ExperimentConfig, PairConfig};
use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Vanilla,
    Mmd,
    Cp,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Vanilla, Arm::Mmd, Arm::Cp];

    pub fn name(self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Mmd => "+mmd",
            Self::Cp => "+cp",
        }
    }

    /// Vanilla: no alignment, no cascade. `+mmd`: alignment only.
    /// `+cp`: alignment and cascade.
    pub fn configure(
        self,
        spec: &ModelSpec,
        train: &TrainConfig,
        ablation: &AblationConfig,
    ) -> (ModelSpec, TrainConfig) {
        let mut spec = spec.clone();
        let mut train = train.clone();
        let (xi, cp) = match self {
            Self::Vanilla => (0.0, 0),
            Self::Mmd => (ablation.xi, 0),
            Self::Cp => (ablation.xi, ablation.cp_rounds),
        };
        spec.cp_rounds = cp;
        train.xi = xi;
        (spec, train)
    }

    /// The vanilla arm drops the `xi` axis. A `cp_rounds` axis would
    /// erase the difference between arms and is rejected.
    pub fn grid(self, grid: &Grid) -> Result<Grid> {
        if grid.contains_key("cp_rounds") {
            return Err(CliError::Config(
                "cp_rounds cannot be a grid axis in an ablation".into(),
            ));
        }
        let mut g = grid.clone();
        if self == Self::Vanilla {
            g.remove("xi");
        }
        Ok(g)
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub variant: Variant,
    pub arm: Arm,
    /// Selected grid point (empty without a grid).
    pub point: GridPoint,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub summary: SeedSummary,
}

/// Runs one arm over the configured seeds, grid-searching if a grid is set.
pub fn run_arm(
    source: &PreparedDomain,
    target: &PreparedDomain,
    variant: Variant,
    arm: Arm,
    cfg: &ExperimentConfig,
) -> Result<ArmResult> {
    let mut base = cfg.model.clone();
    base.variant = variant;
    let (spec, train) = arm.configure(&base, &cfg.train, &cfg.ablation);
    let grid = arm.grid(&cfg.grid)?;
    let (point, spec, train, summary) = if grid.is_empty() {
        spec.validate()?;
        let summary = run_seeds(&spec, &train, source, target, &cfg.seeds)?;
        (GridPoint::new(), spec, train, summary)
    } else {
        let result = grid_search(&grid, &spec, &train, source, target, &cfg.seeds)?;
        let best = result.best_row().clone();
        let (spec, train) = ugnn_core::trainer::apply_point(&best.point, &spec, &train)?;
        (best.point, spec, train, best.summary)
    };
    Ok(ArmResult {
        variant,
        arm,
        point,
        spec,
        train,
        summary,
    })
}

/// The three arms in order: vanilla, `+mmd`, `+cp`.
pub fn ablation(
    source: &PreparedDomain,
    target: &PreparedDomain,
    variant: Variant,
    cfg: &ExperimentConfig,
) -> Result<Vec<ArmResult>> {
    Arm::ALL
        .iter()
        .map(|&arm| run_arm(source, target, variant, arm, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub xi: f64,
    pub summary: SeedSummary,
}

/// One row per distinct ξ, ascending. Other hyperparameters come from the
/// configuration as given, including `model.cp_rounds`.
pub fn sensitivity(
    source: &PreparedDomain,
    target: &PreparedDomain,
    variant: Variant,
    cfg: &ExperimentConfig,
) -> Result<Vec<SensitivityRow>> {
    let mut xis = cfg.sensitivity.xi_values.clone();
    xis.sort_by(f64::total_cmp);
    xis.dedup();
    if xis.is_empty() {
        return Err(CliError::Config("sensitivity needs at least one xi".into()));
    }
    let mut spec = cfg.model.clone();
    spec.variant = variant;
    spec.validate()?;
    xis.into_iter()
        .map(|xi| {
            let train = TrainConfig {
                xi,
                ..cfg.train.clone()
            };
            Ok(SensitivityRow {
                xi,
                summary: run_seeds(&spec, &train, source, target, &cfg.seeds)?,
            })
        })
        .collect()
}

/// Lower-level objective of a model trained on one domain, evaluated on
/// another at the propagated embedding anchored at the pre-processor output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveCell {
    pub train_domain: String,
    pub eval_domain: String,
    pub seed: u64,
    pub f_low: f64,
}

fn model_for(
    domain: &PreparedDomain,
    spec: &ModelSpec,
    train: &TrainConfig,
    seed: u64,
    checkpoints: &BTreeMap<String, PathBuf>,
) -> Result<UgnnModel> {
    if let Some(path) = checkpoints.get(domain.name()) {
        return Ok(Checkpoint::load(path)?);
    }
    let model = UgnnModel::new(
        spec.clone(),
        domain.data.feature_dim,
        domain.data.class_count,
        seed,
    )?;
    let train = TrainConfig {
        xi: 0.0,
        ..train.clone()
    };
    Ok(train_source(model, domain, domain, &train, seed)?.0)
}

/// Cells `S→S, T→S, T→T, S→T` (train domain → evaluation domain) for one
/// seed.
pub fn objective_cells(
    source: &PreparedDomain,
    target: &PreparedDomain,
    spec: &ModelSpec,
    train: &TrainConfig,
    seed: u64,
    checkpoints: &BTreeMap<String, PathBuf>,
) -> Result<Vec<ObjectiveCell>> {
    let on_source = model_for(source, spec, train, seed, checkpoints)?;
    let on_target = model_for(target, spec, train, seed, checkpoints)?;
    let cell = |model: &UgnnModel, trained: &PreparedDomain, eval: &PreparedDomain| -> Result<ObjectiveCell> {
        Ok(ObjectiveCell {
            train_domain: trained.name().to_string(),
            eval_domain: eval.name().to_string(),
            seed,
            f_low: theorem_check(model, &eval.ops, &eval.features)?.f_transfer,
        })
    };
    Ok(vec![
        cell(&on_source, source, source)?,
        cell(&on_target, target, source)?,
        cell(&on_target, target, target)?,
        cell(&on_source, source, target)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRow {
    pub pair: usize,
    pub train_domain: String,
    pub eval_domain: String,
    pub f_low_mean: f64,
    /// Min-max normalized over the four cells of its pair.
    pub f_low_normalized: f64,
    pub cells: Vec<ObjectiveCell>,
}

/// Source and target of `pair` with operators built, the synthetic
/// generator reseeded when `seed` is given.
pub fn prepare_pair(
    pair: &PairConfig,
    add_self_loops: bool,
    seed: Option<u64>,
) -> Result<(PreparedDomain, PreparedDomain)> {
    let (s, t) = match (&pair.synthetic, seed) {
        (Some(shift), Some(seed)) => {
            pair.validate()?;
            generate_shifted_pair(&ShiftConfig {
                seed,
                ..shift.clone()
            })?
        }
        _ => pair.load()?,
    };
    Ok((
        PreparedDomain::new(s, add_self_loops)?,
        PreparedDomain::new(t, add_self_loops)?,
    ))
}

/// Seed-averaged cells for every configured pair, min-max normalized within
/// the pair.
pub fn objective_table(cfg: &ExperimentConfig) -> Result<Vec<ObjectiveRow>> {
    let loops = cfg.model.add_self_loops;
    let resample = cfg.objective_table.resample_synthetic;
    let mut rows = Vec::new();
    for (i, pair) in cfg.pairs.iter().enumerate() {
        let shared = if resample && pair.synthetic.is_some() {
            None
        } else {
            Some(prepare_pair(pair, loops, None)?)
        };
        let per_seed = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let fresh;
                let (source, target) = match &shared {
                    Some(p) => p,
                    None => {
                        fresh = prepare_pair(pair, loops, Some(seed))?;
                        &fresh
                    }
                };
                objective_cells(
                    source,
                    target,
                    &cfg.model,
                    &cfg.train,
                    seed,
                    &cfg.objective_table.checkpoints,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let means: Vec<f64> = (0..4)
            .map(|c| per_seed.iter().map(|s| s[c].f_low).sum::<f64>() / per_seed.len() as f64)
            .collect();
        for (c, normalized) in minmax_normalize(&means)?.into_iter().enumerate() {
            let cells: Vec<ObjectiveCell> = per_seed.iter().map(|s| s[c].clone()).collect();
            rows.push(ObjectiveRow {
                pair: i,
                train_domain: cells[0].train_domain.clone(),
                eval_domain: cells[0].eval_domain.clone(),
                f_low_mean: means[c],
                f_low_normalized: normalized,
                cells,
            });
        }
    }
    Ok(rows)
}
