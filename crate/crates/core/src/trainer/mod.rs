//! Optimizer, training loops, metrics, grid search, and seed aggregation.

mod adam;
mod grid;
mod metrics;
mod report;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use grid::{
    apply_point, grid_points, grid_search, run_seeds, Grid, GridPoint, GridResult, GridRow,
    SeedSummary,
};
pub use metrics::{f1_scores, F1Scores};
pub use report::{config_hash, MeanStd, RunReport};
pub use train::{
    evaluate, run_once, train_oracle, train_oracle_frozen_pos, train_source, PreparedDomain,
    TrainConfig,
};
