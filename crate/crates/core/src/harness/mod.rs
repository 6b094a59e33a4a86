//! Monte-Carlo experiments, noise sweeps and their CSV/SVG outputs.

pub mod config;
pub mod experiment;
pub mod output;
pub mod plot;

pub use config::{BenchmarkKind, ConfigError, ExperimentConfig};
pub use experiment::{
    aggregate, default_sweep_scales, normalize_scales, run_experiment, run_filter, run_seed,
    run_single, run_sweep, time_average, AggregateResult, Execution, RunRecord, SweepRow,
    AVERAGE_FROM_STEP,
};
pub use output::{
    curve_csv, parse_curve_csv, parse_sweep_csv, series_csv, sweep_csv, write_text, OutputError,
};
pub use plot::{LinePlot, PlotError, Series};
