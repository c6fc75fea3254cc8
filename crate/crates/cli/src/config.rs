//! The single JSON document every command reads.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ugnn_core::data::{generate_shifted_pair, load_domain, DomainDataset, ShiftConfig};
use ugnn_core::models::{ModelSpec, Variant};
use ugnn_core::trainer::{config_hash, Grid, TrainConfig};

use crate::{CliError, Result};

/// A source/target pair read from disk or generated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub source_dir: Option<PathBuf>,
    pub target_dir: Option<PathBuf>,
    pub synthetic: Option<ShiftConfig>,
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.source_dir, &self.target_dir, &self.synthetic) {
            (Some(_), Some(_), None) => Ok(()),
            (None, None, Some(s)) => Ok(s.validate()?),
            _ => Err(CliError::Config(
                "a pair needs either source_dir and target_dir, or synthetic".into(),
            )),
        }
    }

    pub fn load(&self) -> Result<(DomainDataset, DomainDataset)> {
        self.validate()?;
        match (&self.source_dir, &self.target_dir, &self.synthetic) {
            (Some(s), Some(t), None) => Ok((load_domain(s)?, load_domain(t)?)),
            (_, _, Some(cfg)) => Ok(generate_shifted_pair(cfg)?),
            _ => unreachable!("validated above"),
        }
    }
}

/// The three ablation arms share `xi` and the cascade depth of the last arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// MMD weight of the `+mmd` and `+cp` arms when the grid has no `xi` axis.
    pub xi: f64,
    /// Cascade rounds of the `+cp` arm.
    pub cp_rounds: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { xi: 1.0, cp_rounds: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub xi_values: Vec<f64>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            xi_values: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveTableConfig {
    /// Trained checkpoints by domain name. Domains without one are trained
    /// per seed.
    pub checkpoints: BTreeMap<String, PathBuf>,
    /// Regenerate synthetic pairs for every seed with the generator seed set
    /// to the run seed, so each seed is an independent replicate.
    pub resample_synthetic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremConfig {
    pub trials: usize,
    pub variants: Vec<Variant>,
    pub max_nodes: usize,
    /// Extra cascade rounds whose per-round objectives must not increase.
    pub cascade_rounds: usize,
    /// Base seed; `--seed` overrides it.
    pub seed: u64,
    /// Runs only this instance seed (as printed by a failing check).
    pub replay: Option<u64>,
    /// Reports a fabricated violation on the first trial.
    pub inject_violation: bool,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            variants: Variant::ALL.to_vec(),
            max_nodes: 200,
            cascade_rounds: 4,
            seed: 0,
            replay: None,
            inject_violation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub tolerance: f64,
    pub step: f64,
    pub seeds: Vec<u64>,
    /// Swaps in a wrong backward rule for relu.
    pub inject_fault: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-5,
            step: 1e-5,
            seeds: vec![0, 1, 2],
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pairs: Vec<PairConfig>,
    /// Variants for multi-variant commands; empty means `model.variant`.
    pub variants: Vec<Variant>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Hyperparameter grid searched per arm; empty means one point.
    pub grid: Grid,
    pub ablation: AblationConfig,
    pub sensitivity: SensitivityConfig,
    pub objective_table: ObjectiveTableConfig,
    pub theorem: TheoremConfig,
    pub gradcheck: GradcheckConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            variants: Vec::new(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            grid: Grid::new(),
            ablation: AblationConfig::default(),
            sensitivity: SensitivityConfig::default(),
            objective_table: ObjectiveTableConfig::default(),
            theorem: TheoremConfig::default(),
            gradcheck: GradcheckConfig::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies `--seed`: the seed list becomes `seed, seed+1, ...` with the
    /// configured length and the theorem base seed becomes `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        let n = self.seeds.len().max(1) as u64;
        self.seeds = (0..n).map(|i| seed.wrapping_add(i)).collect();
        self.theorem.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        for p in &self.pairs {
            p.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        if self.ablation.xi < 0.0 || !self.ablation.xi.is_finite() {
            return Err(CliError::Config(format!("ablation xi {}", self.ablation.xi)));
        }
        if self.sensitivity.xi_values.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(CliError::Config("sensitivity xi values must be finite and >= 0".into()));
        }
        if !(self.gradcheck.tolerance > 0.0 && self.gradcheck.step > 0.0) {
            return Err(CliError::Config("gradcheck tolerance and step must be positive".into()));
        }
        Ok(())
    }

    pub fn variants(&self) -> Vec<Variant> {
        if self.variants.is_empty() {
            vec![self.model.variant]
        } else {
            self.variants.clone()
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Hash of everything that affects results; the output location does not.
    pub fn hash(&self) -> Result<String> {
        let mut cfg = self.clone();
        cfg.output_dir = None;
        Ok(config_hash(&cfg)?)
    }

    pub fn first_pair(&self) -> Result<&PairConfig> {
        self.pairs
            .first()
            .ok_or_else(|| CliError::Config("at least one pair is required".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"seeds": [1], "colour": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"model": {"depth": 3}}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"seeds": [7]}"#).unwrap();
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.theorem.trials, 100);
    }

    #[test]
    fn pair_needs_exactly_one_source_of_data() {
        let both = PairConfig {
            source_dir: Some("a".into()),
            target_dir: Some("b".into()),
            synthetic: Some(ShiftConfig::default()),
        };
        assert!(both.validate().is_err());
        assert!(PairConfig::default().validate().is_err());
        let half = PairConfig {
            source_dir: Some("a".into()),
            ..PairConfig::default()
        };
        assert!(half.validate().is_err());
    }

    #[test]
    fn seed_override_shifts_the_list() {
        let c = ExperimentConfig::default().with_seed(10);
        assert_eq!(c.seeds, vec![10, 11, 12, 13, 14]);
        assert_eq!(c.theorem.seed, 10);
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = ExperimentConfig::from_json(r#"{"seeds": [1], "ablation": {"xi": 2, "cp_rounds": 1}}"#).unwrap();
        let b = ExperimentConfig::from_json(r#"{"ablation": {"cp_rounds": 1, "xi": 2}, "seeds": [1]}"#).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = ExperimentConfig {
            output_dir: Some("elsewhere".into()),
            ..a.clone()
        };
        assert_eq!(a.hash().unwrap(), c.hash().unwrap());
    }
}
