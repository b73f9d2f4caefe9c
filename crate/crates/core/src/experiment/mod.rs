//! Experiment harness: configuration, orchestration of the pre-train /
//! adapt / infer pipeline, metrics emission and embedding export.

mod config;
mod metrics;
mod runner;

pub use config::{
    apply_overrides, config_from_text, parse_sections, render_config, ExperimentConfig,
};
pub use metrics::{
    metrics_csv, strategy_csv, summary_json, sweep_csv, ClientRepMetrics, ClientSummary,
    RepMetrics, RunMetrics, StrategyReport, StrategyRow, SweepReport, SweepRow, Timing,
};
pub use runner::{
    build_world, client_config, client_target_split, compare_strategies, embeddings_csv,
    plans_for, prototype_accuracy, run_experiment, run_rep, sweep_k, World,
};
