//! End-to-end experiment pipeline: configuration, grid runner, defense replay
//! and figure-data export.

mod config;
mod defense_suite;
mod export;
mod pipeline;
mod runner;

pub use config::{
    benchmark_sbm, parse_seeds, ExperimentConfig, BOOTSTRAP_RESAMPLES, DEFAULT_GN_COMMUNITIES,
    DEFAULT_K_GRID, KEYS, SYNTHETIC,
};
pub use defense_suite::{
    replay, run_defense_suite, DefenseOutcome, DefenseSummary, DEFENSE_SUMMARY_FILE,
    EDGE_HIST_FILE, GN_FILE, KMEANS_FILE, NODE_HIST_FILE,
};
pub use export::{
    export_figures_data, IMPACT_CSV, IMPACT_HEADER, SUMMARY_CSV, SUMMARY_HEADER,
    THEORY_CURVE_FILE,
};
pub use pipeline::{reports, run_trial, PhaseAccuracy, TrialOutcome, TrialSeeds, TrialSpec};
pub use runner::{
    grid_cells, load_dataset, mechanism_for, parse_results_csv, plan_path, read_stored_plan,
    read_summary, rows_to_csv, run_experiment, run_grid, seed_instance, summarize, with_workers,
    write_outputs, Cell, CellStat, ExperimentOutput, ImpactStat, Phase, ResultRow, SkippedCell,
    StoredPlan, Summary, PLANS_DIR, PLAN_FILE, RESOLVED_FILE, RESULTS_FILE, RESULTS_HEADER,
    SUMMARY_FILE,
};
