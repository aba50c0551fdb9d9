//! Impact estimation on a latent construct from item-level binary
//! outcomes, with a robust check of whether the result depends on the
//! particular items used.
//!
//! The pipeline: fit a two-parameter logistic model separately in the
//! control and treatment groups, convert per-item parameter contrasts to
//! item-level effects on the control trait scale, then aggregate. The
//! naive estimate is the unweighted mean of item effects; the robust
//! estimate down-weights items whose effects fall outside a confidence
//! band around the current solution, using a redescending bisquare
//! weight. The difference between the two estimates, scaled by its
//! standard error, is a specification test: a significant value signals
//! that item-level anomalies (differential item functioning) contaminate
//! the naive effect.
//!
//! Modules:
//! - [`irt`]: the 2PL model, quadrature grids, marginal likelihood.
//! - [`estimate`]: per-group marginal ML fitting and item screening.
//! - [`scaling`]: item effects, robust aggregation, the difference test.
//! - [`sim`]: Monte Carlo engine for the two built-in study designs.
//! - [`ingest`] / [`report`]: CSV input and report output for the CLI.

// validators use negated comparisons (`!(x > 0.0)`) so NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod estimate;
pub mod ingest;
pub mod irt;
pub mod report;
pub mod scaling;
pub mod sim;

pub use data::ResponseDataset;
pub use error::{Error, Result};
pub use estimate::{
    fit_both_groups, fit_group, screen_and_fit, screen_items, EmSettings, FittedGroup,
    ItemParameterSet, ScreenReport, ScreenRules,
};
pub use ingest::{ingest_csv, IngestOptions};
pub use irt::{make_grid, marginal_loglik, response_prob, GroupModel, ItemParams, QuadratureGrid};
pub use report::{
    analyze_dataset, canonical_report, items_to_csv, report_to_json, summary_to_csv,
    summary_to_json, AnalysisReport, AnalyzeOptions, ItemRow,
};
pub use scaling::{
    bisquare_psi, bisquare_psi_prime, bisquare_rho, delta_test, diff_null_variance, item_effects,
    naive_effect, null_variance, robust_effect, robust_effect_with_floor, robust_loss, robust_se,
    tuning_parameters, ItemEffect, RobustFit, ScalingResult, StartSpec,
};
pub use sim::{
    generate_preexposure, generate_washout, run_study, ConditionSummary, GeneratedTruth,
    ReplicationRecord, SimulationConfig, SimulationSummary, Study,
};
