//! Run metrics and their CSV / JSON renderings. Timing lives outside the
//! deterministic payload so reruns produce identical artifact files.

use crate::sampler::TelemetryRow;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientRepMetrics {
    pub client_id: u64,
    pub accuracy: Option<f64>,
    pub zero_shot_accuracy: f64,
    pub pre_loss: Option<f64>,
    pub post_loss: Option<f64>,
    pub epoch_losses: Vec<f64>,
    pub bytes_to_server: u64,
    pub bytes_from_server: u64,
    pub params_response_bytes: u64,
    pub params_response_kind: String,
    pub labels_requested: usize,
    pub labels_discarded: usize,
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sampler_telemetry: Vec<TelemetryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepMetrics {
    pub rep: usize,
    pub seed: u64,
    pub pretrain_loss: Vec<f64>,
    pub final_version: u64,
    pub clients: Vec<ClientRepMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientSummary {
    pub client_id: u64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub zero_shot_mean: f64,
    pub accuracies: Vec<f64>,
}

/// Deterministic metrics of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub k: usize,
    pub strategy: String,
    pub transport: String,
    pub repetitions: usize,
    pub clients: Vec<ClientSummary>,
    pub reps: Vec<RepMetrics>,
}

/// Wall-clock numbers; excluded from determinism comparisons.
#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub total_seconds: f64,
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub(crate) fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

impl RunMetrics {
    /// Mean accuracy over all clients and repetitions.
    pub fn overall_accuracy_mean(&self) -> f64 {
        let accs: Vec<f64> = self
            .reps
            .iter()
            .flat_map(|r| r.clients.iter().filter_map(|c| c.accuracy))
            .collect();
        mean(&accs)
    }

    pub fn overall_zero_shot_mean(&self) -> f64 {
        let accs: Vec<f64> = self
            .reps
            .iter()
            .flat_map(|r| r.clients.iter().map(|c| c.zero_shot_accuracy))
            .collect();
        mean(&accs)
    }

    /// Per-repetition accuracy averaged over clients.
    pub fn per_rep_accuracies(&self) -> Vec<f64> {
        self.reps
            .iter()
            .map(|r| {
                let accs: Vec<f64> = r.clients.iter().filter_map(|c| c.accuracy).collect();
                mean(&accs)
            })
            .collect()
    }
}

/// Flat per-(rep, client) CSV.
pub fn metrics_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from(
        "rep,seed,client_id,k,strategy,transport,accuracy,zero_shot_accuracy,pre_loss,post_loss,\
         bytes_to_server,bytes_from_server,params_response_bytes,params_response_kind,\
         labels_requested,labels_discarded,error\n",
    );
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for rep in &metrics.reps {
        for c in &rep.clients {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                rep.rep,
                rep.seed,
                c.client_id,
                metrics.k,
                metrics.strategy,
                metrics.transport,
                fmt_opt(c.accuracy),
                c.zero_shot_accuracy,
                fmt_opt(c.pre_loss),
                fmt_opt(c.post_loss),
                c.bytes_to_server,
                c.bytes_from_server,
                c.params_response_bytes,
                c.params_response_kind,
                c.labels_requested,
                c.labels_discarded,
                c.error.clone().unwrap_or_default()
            ));
        }
    }
    out
}

/// JSON summary: deterministic run payload plus a separate timing object.
pub fn summary_json(metrics: &RunMetrics, timing: &Timing) -> String {
    #[derive(Serialize)]
    struct Summary<'a> {
        run: &'a RunMetrics,
        timing: &'a Timing,
    }
    serde_json::to_string_pretty(&Summary { run: metrics, timing })
        .expect("metrics serialize")
        + "\n"
}

/// One row of a k sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub zero_shot_mean: f64,
    pub per_rep_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from("k,accuracy_mean,accuracy_std,zero_shot_mean\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.k, row.accuracy_mean, row.accuracy_std, row.zero_shot_mean
        ));
    }
    out
}

/// Byte accounting for one transmission strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyRow {
    pub strategy: String,
    /// Frame size of the hello response on first contact.
    pub first_contact_bytes: u64,
    /// Frame size of the hello response after one aggregation round.
    pub post_aggregation_params_bytes: u64,
    pub total_bytes_from_server: u64,
    pub total_bytes_to_server: u64,
    pub accuracy_mean: f64,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyReport {
    pub rows: Vec<StrategyRow>,
    pub accuracies_identical: bool,
}

pub fn strategy_csv(report: &StrategyReport) -> String {
    let mut out = String::from(
        "strategy,first_contact_bytes,post_aggregation_params_bytes,total_bytes_from_server,\
         total_bytes_to_server,accuracy_mean\n",
    );
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.strategy,
            row.first_contact_bytes,
            row.post_aggregation_params_bytes,
            row.total_bytes_from_server,
            row.total_bytes_to_server,
            row.accuracy_mean
        ));
    }
    out
}
