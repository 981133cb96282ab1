//! WAX decomposition of multi-antenna channels into panel-local processing,
//! a fixed combining network and CPU-side processing.

mod error;
mod experiment;
mod linalg;
mod lossy;
mod matrix;
mod model;
mod solver;
mod sparse;
mod validity;

pub use error::{Result, WaxError};
pub use experiment::{
    derive_seed, meta_path, rate_point, render_csv, run_experiment, validate_point,
    ExperimentConfig, ExperimentKind, ExperimentOutcome, Sweep, SweepAxis,
};
pub use lossy::{
    approx_mf, db_to_linear, mutual_info_y, mutual_info_z, panel_select_rate, rate_report,
    refine_rate, select_panels, ApproxMf, PanelSelection, RateMethod, RateReport, Refined,
    DEFAULT_EVAL_BUDGET,
};
pub use matrix::{full_precision, CMatrix, C64};
pub use model::{admits_wax, numeric_rank, sample_gaussian, t_opt, BlockDiag, Dims, RngSpec};
pub use solver::{
    apply_processing, build_system, expand_combiner, plan_dimensions, split_unknowns,
    stack_unknowns, wax_decompose, wax_decompose_panels, wax_decompose_with, wax_residual,
    AntennaLimit, InfeasibleReason, InfeasibleReport, NullSpaceRoute, Plan, PlanQuery,
    SystemMatrix, WaxFactors, WaxOptions, COND_LIMIT, DEFAULT_MAX_ATTEMPTS, SUCCESS_TOL,
};
pub use sparse::{
    minimize_ones, minimize_ones_restarts, random_sparse_a, sum_modules, valid_fraction,
    FractionEstimate, SearchResult, DEFAULT_SEARCH_BUDGET,
};
pub use validity::{
    check_block_rank, check_row_rank, ones_lower_bound, r_max, rank_profile_cap, validate_combiner,
    FailedCondition, RMax, RankCheck, RankProfile, SparsityBound, Verdict, Witness,
    DEFAULT_SUBSET_CAP, RANK_PROFILE_BUDGET,
};
