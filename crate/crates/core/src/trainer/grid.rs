use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{MeanStd, RunReport};
use super::train::{run_once, PreparedDomain, TrainConfig};
use crate::models::ModelSpec;
use crate::{Error, Result};

/// Named hyperparameter axes. Recognized names: `learning_rate`,
/// `weight_decay`, `xi`, `alpha`, `lambda1`, `lambda2`, `cp_rounds`, `k`.
pub type Grid = BTreeMap<String, Vec<f64>>;

/// One assignment of every grid axis.
pub type GridPoint = BTreeMap<String, f64>;

/// Writes `point` into copies of the base configuration.
pub fn apply_point(
    point: &GridPoint,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(ModelSpec, TrainConfig)> {
    let mut spec = spec.clone();
    let mut cfg = cfg.clone();
    for (name, &v) in point {
        let count = || -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("{name} must be a whole number, got {v}")))
            }
        };
        match name.as_str() {
            "learning_rate" => cfg.learning_rate = v,
            "weight_decay" => cfg.weight_decay = v,
            "xi" => cfg.xi = v,
            "alpha" => spec.alpha = v,
            "lambda1" => spec.elastic.lambda1 = v,
            "lambda2" => spec.elastic.lambda2 = v,
            "cp_rounds" => spec.cp_rounds = count()?,
            "k" => spec.k = count()?,
            other => return Err(Error::InvalidConfig(format!("unknown grid axis {other:?}"))),
        }
    }
    spec.validate()?;
    cfg.validate()?;
    Ok((spec, cfg))
}

/// Cartesian product in canonical order: axes by name, values ascending.
pub fn grid_points(grid: &Grid) -> Result<Vec<GridPoint>> {
    let mut points = vec![GridPoint::new()];
    for (name, values) in grid {
        if values.is_empty() {
            return Err(Error::InvalidConfig(format!("grid axis {name:?} is empty")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("grid axis {name:?} has a non-finite value")));
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        points = points
            .into_iter()
            .flat_map(|p| {
                sorted.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.insert(name.clone(), v);
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub macro_f1: MeanStd,
    pub micro_f1: MeanStd,
    pub val_micro_f1: MeanStd,
    pub f_low_transfer: MeanStd,
    pub f_low_cp: MeanStd,
    pub reports: Vec<RunReport>,
}

impl SeedSummary {
    pub fn from_reports(reports: Vec<RunReport>) -> Self {
        let col = |f: fn(&RunReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        Self {
            seeds: reports.iter().map(|r| r.seed).collect(),
            macro_f1: col(|r| r.target_macro_f1),
            micro_f1: col(|r| r.target_micro_f1),
            val_micro_f1: col(|r| r.best_val_micro_f1),
            f_low_transfer: col(|r| r.f_low_transfer),
            f_low_cp: col(|r| r.f_low_cp),
            reports,
        }
    }
}

/// Runs every seed (in parallel on the current rayon pool) and aggregates.
/// Reports keep the order of `seeds`.
pub fn run_seeds(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    source: &PreparedDomain,
    target: &PreparedDomain,
    seeds: &[u64],
) -> Result<SeedSummary> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let reports = seeds
        .par_iter()
        .map(|&seed| run_once(spec, cfg, source, target, seed).map(|(_, r)| r))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedSummary::from_reports(reports))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub point: GridPoint,
    pub summary: SeedSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Index into `rows` of the selected point.
    pub best: usize,
    pub rows: Vec<GridRow>,
}

impl GridResult {
    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }
}

/// Evaluates every grid point over `seeds` and selects the point with the
/// highest mean source-validation Micro-F1; ties go to the earliest point
/// in canonical order.
pub fn grid_search(
    grid: &Grid,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    source: &PreparedDomain,
    target: &PreparedDomain,
    seeds: &[u64],
) -> Result<GridResult> {
    let points = grid_points(grid)?;
    let configs = points
        .iter()
        .map(|p| apply_point(p, spec, cfg))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(i, seed)| run_once(&configs[i].0, &configs[i].1, source, target, seed).map(|(_, r)| r))
        .collect::<Result<Vec<_>>>()?;
    let mut chunks = reports.chunks(seeds.len().max(1));
    let rows: Vec<GridRow> = points
        .into_iter()
        .map(|point| GridRow {
            point,
            summary: SeedSummary::from_reports(chunks.next().map(<[_]>::to_vec).unwrap_or_default()),
        })
        .collect();
    let mut best = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.summary.val_micro_f1.mean > rows[best].summary.val_micro_f1.mean {
            best = i;
        }
    }
    Ok(GridResult { best, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_enumeration() {
        let mut g = Grid::new();
        g.insert("xi".into(), vec![2.0, 1.0]);
        g.insert("alpha".into(), vec![0.5, 0.1]);
        let pts = grid_points(&g).unwrap();
        let flat: Vec<(f64, f64)> = pts.iter().map(|p| (p["alpha"], p["xi"])).collect();
        assert_eq!(flat, vec![(0.1, 1.0), (0.1, 2.0), (0.5, 1.0), (0.5, 2.0)]);
        let mut h = Grid::new();
        h.insert("alpha".into(), vec![0.1, 0.5]);
        h.insert("xi".into(), vec![1.0, 2.0, 1.0]);
        assert_eq!(grid_points(&h).unwrap(), pts);
    }

    #[test]
    fn rejects_unknown_and_empty_axes() {
        let mut g = Grid::new();
        g.insert("xi".into(), vec![]);
        assert!(grid_points(&g).is_err());
        let mut p = GridPoint::new();
        p.insert("momentum".into(), 0.9);
        assert!(apply_point(&p, &ModelSpec::default(), &TrainConfig::default()).is_err());
        let mut p = GridPoint::new();
        p.insert("cp_rounds".into(), 1.5);
        assert!(apply_point(&p, &ModelSpec::default(), &TrainConfig::default()).is_err());
    }
}
