//! Experiment files, metrics persistence, charts and run metadata.

mod config;
mod metrics;
mod report;
mod run;

pub use config::{
    parse_config, parse_config_str, validate_experiment, BuiltEnvironment, EnvironmentSpec,
    ExperimentConfig, FeaturesBlock, LoadedConfig, TrainerBlock, ValidationSummary, DEFAULT_HORIZON,
};
pub use metrics::{
    lambda_agents_header, metrics_header, metrics_row, write_atomic, CsvSink, MetricsTable,
    CHECKPOINT_FILE, LAMBDA_AGENTS_FILE, METRICS_FILE,
};
pub use report::{chart_panels, emit_report, render_svg, Panel, Series, LAMBDA_CHART, OBJECTIVE_CHART};
pub use run::{
    output_dir, run_experiment, sha256_hex, RunLock, RunManifest, RunOutcome, RunStatus,
    ARTIFACT_VERSION, LOCK_FILE, MANIFEST_FILE, RESOLVED_CONFIG_FILE,
};
