//! Experiment scenarios, metrics and CSV persistence.

mod bench;
mod experiment;
mod metrics;
mod selftest;

pub use bench::{
    fit_loglog_slope, run_scaling_benchmark, BenchReport, BenchRow, BenchSpec, SlopeFit, ICVBI_SOLVE, SCVBI_ROUND,
};
pub use experiment::{
    build_instance, run_cell, run_cells, run_experiment, solve_cell, Algorithm, Cell, CellResult, ExperimentSpec,
    HyperOverrides, Instance, PriorVariant, TruthSpec,
};
pub use metrics::{
    nmse_db, nmse_db_with_floor, read_records, write_records, write_records_to_path, MetricRecord, EXACT_RECOVERY_DB,
    METRIC_COLUMNS, NOISE_FREE,
};
pub use selftest::{
    gaussian_instance, grid_gradient_fd_error, mean_gradient_fd_error, run_selftest, GaussianInstance, SelftestCheck,
    SelftestReport,
};
