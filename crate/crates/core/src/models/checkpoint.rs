use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelSpec, UgnnModel};
use crate::{Error, Result};

const FORMAT: &str = "ugnn-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// JSON snapshot of a model: spec, dimensions, seed, and every parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    pub input_dim: usize,
    pub class_count: usize,
    pub seed: u64,
    pub post_frozen: bool,
    pub params: Vec<SavedParam>,
}

impl Checkpoint {
    pub fn of(model: &UgnnModel) -> Self {
        let store = model.store();
        Self {
            format: FORMAT.to_string(),
            spec: model.spec().clone(),
            input_dim: model.input_dim(),
            class_count: model.class_count(),
            seed: model.seed(),
            post_frozen: model.post_frozen(),
            params: store
                .ids()
                .map(|id| {
                    let v = store.value(id);
                    SavedParam {
                        name: store.name(id).to_string(),
                        rows: v.rows(),
                        cols: v.cols(),
                        data: v.data().to_vec(),
                    }
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<UgnnModel> {
        if self.format != FORMAT {
            return Err(Error::InvalidData(format!("unknown checkpoint format {:?}", self.format)));
        }
        let mut model = UgnnModel::new(self.spec, self.input_dim, self.class_count, self.seed)?;
        model.set_post_frozen(self.post_frozen);
        if self.params.len() != model.store().len() {
            return Err(Error::InvalidData(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                model.store().len()
            )));
        }
        for p in self.params {
            let id = model
                .store()
                .find(&p.name)
                .ok_or_else(|| Error::InvalidData(format!("unexpected parameter {}", p.name)))?;
            let expected = model.store().value(id).shape();
            if expected != (p.rows, p.cols) {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint",
                    left: expected,
                    right: (p.rows, p.cols),
                });
            }
            model.store_mut().get_mut(id).value =
                crate::tensor::DenseMatrix::from_vec(p.rows, p.cols, p.data)?;
        }
        Ok(model)
    }

    pub fn save(model: &UgnnModel, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&Self::of(model))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<UgnnModel> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        serde_json::from_str::<Self>(&text)?.into_model()
    }
}
