//! Reproducible experiment driver: configuration, sweeps over
//! (T, d, K, score-error amplitude, contamination), reports and charts.

mod chart;
mod config;
mod sweep;

pub use chart::{render_charts, ChartError};
pub use config::{
    parse_config, parse_config_str, ConfigError, ExperimentSpec, MeanPlacement, OracleKind,
    OracleSpec, RunSpec, ScheduleSpec, TargetSpec,
};
pub use sweep::{
    run_sweep, CellCoords, CellReport, CellStatus, CellTiming, ExperimentReport, MetricRow,
    RateFitRow,
};
