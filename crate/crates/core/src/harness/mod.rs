//! Scenario running, disturbance sweeps, reports and config files.

pub mod config;
pub mod output;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{load_config, parse_config, ScenarioConfig};
pub use output::{controller_label, write_compare, write_polygons, write_run};
pub use report::{
    compare_report, CompareReport, Delta, PolygonEntry, PolygonFile, RunFile, RunRecord, POLYGON_FILE, SUMMARY_FILE,
};
pub use run::{fmt_sig9, run_scenario, summarize, write_csv, RunSummary, ScenarioResult, CSV_COLUMNS};
pub use sweep::{
    max_impulse, probe_recovery, stepping_onset, sweep_disturbance_polygon, DirectionResult, DisturbancePolygon,
    ProbeOutcome, RecoveryCriteria, SweepSettings, Trial,
};
