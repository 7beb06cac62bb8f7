//! Nested cross-validation: folds, grid search, the probe pipeline and
//! aggregation.

mod aggregate;
mod design;
mod folds;
mod grid;
mod pipeline;

pub use aggregate::{aggregate, compare_sites, MeanSe, SiteComparison, SiteSummary};
pub use design::{SiteData, Targets};
pub use folds::{make_folds, FoldSpec};
pub use grid::{feasible_q, grid_search, search_subset, GridConfig, Selection};
pub use pipeline::{
    fit_fold_models, fit_probe_set, run_outer_fold, run_probes, run_probes_partial, select_hyperparameters,
    GroupSelection, PipelineConfig, ProbeRecord, ProbeRun,
};
