//! Graph domains: in-memory representation, the on-disk directory format,
//! a synthetic shifted-pair generator, and source splits.

mod format;
mod split;
mod synthetic;

pub use format::{load_domain, save_domain};
pub use split::{split_source, Split, SplitSpec};
pub use synthetic::{generate_shifted_pair, ShiftConfig};

use crate::graph::{build_operators, CsrMatrix, Graph, GraphOperators, SparseOperator};
use crate::{Error, Result};

/// One labelled graph domain with sparse node features.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub name: String,
    pub graph: Graph,
    /// `(row, col, value)` sorted by `(row, col)`, no duplicates.
    pub features: Vec<(usize, usize, f64)>,
    pub labels: Vec<usize>,
    pub feature_dim: usize,
    pub class_count: usize,
}

impl DomainDataset {
    /// Validates and canonicalizes (sorts) the feature triplets.
    pub fn new(
        name: impl Into<String>,
        graph: Graph,
        mut features: Vec<(usize, usize, f64)>,
        labels: Vec<usize>,
        feature_dim: usize,
        class_count: usize,
    ) -> Result<Self> {
        let n = graph.n_nodes();
        if labels.len() != n {
            return Err(Error::InvalidData(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if class_count == 0 || feature_dim == 0 {
            return Err(Error::InvalidData("feature_dim and class_count must be positive".into()));
        }
        if let Some((v, &c)) = labels.iter().enumerate().find(|(_, &c)| c >= class_count) {
            return Err(Error::InvalidData(format!(
                "node {v} has class {c}, class_count is {class_count}"
            )));
        }
        features.sort_by_key(|&(r, c, _)| (r, c));
        for w in features.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::InvalidData(format!(
                    "duplicate feature entry ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        if let Some(&(r, c, v)) = features
            .iter()
            .find(|&&(r, c, v)| r >= n || c >= feature_dim || !v.is_finite())
        {
            return Err(Error::InvalidData(format!(
                "feature entry ({r}, {c}, {v}) outside {n} x {feature_dim} or not finite"
            )));
        }
        Ok(Self {
            name: name.into(),
            graph,
            features,
            labels,
            feature_dim,
            class_count,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    /// `X̂` as a sparse operator.
    pub fn feature_operator(&self) -> Result<SparseOperator> {
        Ok(SparseOperator::new(CsrMatrix::from_triplets(
            self.n_nodes(),
            self.feature_dim,
            &self.features,
        )?))
    }

    pub fn operators(&self, add_self_loops: bool) -> Result<GraphOperators> {
        build_operators(&self.graph, add_self_loops)
    }

    /// Source and target must share the feature space and label set.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.feature_dim != other.feature_dim || self.class_count != other.class_count {
            return Err(Error::InvalidData(format!(
                "domains {} ({} features, {} classes) and {} ({} features, {} classes) differ",
                self.name,
                self.feature_dim,
                self.class_count,
                other.name,
                other.feature_dim,
                other.class_count
            )));
        }
        Ok(())
    }

    pub fn all_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).collect()
    }
}
