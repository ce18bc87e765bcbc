//! Output files: atomic writes, per-round CSVs, and repeat aggregation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use gradmarket_core::metrics::{MetricsReport, RoundMetrics, RunSummary};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Write `bytes` to `path` through a temp file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn round_row(repeat: Option<usize>, r: &RoundMetrics) -> Vec<String> {
    let ids: Vec<String> = r.selected.iter().map(usize::to_string).collect();
    let mut row = Vec::with_capacity(7);
    if let Some(rep) = repeat {
        row.push(rep.to_string());
    }
    row.extend([
        r.round.to_string(),
        r.cost.to_string(),
        r.accuracy.to_string(),
        fmt_opt(r.asr),
        fmt_opt(r.msr_fraction),
        ids.join(";"),
    ]);
    row
}

const ROUND_HEADER: [&str; 6] = ["round", "cost", "accuracy", "asr", "msr_fraction", "selected_ids"];

/// `metrics.csv` for one repeat, or for several with a leading `repeat` column.
pub fn metrics_csv(reports: &[&MetricsReport], with_repeat: bool) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = Vec::new();
    if with_repeat {
        header.push("repeat");
    }
    header.extend(ROUND_HEADER);
    w.write_record(&header).map_err(|e| CliError::Runtime(e.to_string()))?;
    for report in reports {
        let rep = with_repeat.then_some(report.summary.repeat);
        for r in &report.rounds {
            w.write_record(round_row(rep, r)).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

/// Scalar metrics of one repeat in column order.
pub fn scalar_metrics(s: &RunSummary) -> Vec<(String, Option<f64>)> {
    let mut out = vec![
        ("final_accuracy".to_string(), s.final_accuracy),
        ("final_asr".into(), s.final_asr),
        ("total_cost".into(), Some(s.total_cost as f64)),
        ("msr_fraction".into(), s.msr_fraction),
        ("msr_rate".into(), s.msr_rate),
        ("bsr".into(), s.bsr),
        ("divergence_selection_r".into(), s.divergence_selection_r),
        ("payment_gini".into(), Some(s.payment_gini)),
        ("selection_entropy_bits".into(), s.selection_entropy_bits),
        ("selection_entropy_normalized".into(), s.selection_entropy_normalized),
        ("selection_stability".into(), s.selection_stability),
        ("cost_benign".into(), s.cost_benign),
        ("cost_malicious".into(), s.cost_malicious),
    ];
    for m in &s.milestones {
        out.push((format!("rounds_to_{}", m.milestone), m.rounds.map(|v| v as f64)));
        out.push((format!("gradients_to_{}", m.milestone), m.gradients.map(|v| v as f64)));
    }
    out
}

/// Mean over the present values; `None` if none are present.
pub fn mean(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Sample standard deviation over the present values; 0 for a single value.
pub fn std_dev(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let m = mean(values)?;
    if present.len() < 2 {
        return Some(0.0);
    }
    let var = present.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (present.len() - 1) as f64;
    Some(var.sqrt())
}

/// Column-wise mean and standard deviation across repeats.
pub fn aggregate_columns(runs: &[RunSummary]) -> (Vec<String>, Vec<Option<f64>>, Vec<Option<f64>>) {
    let columns: Vec<Vec<(String, Option<f64>)>> = runs.iter().map(scalar_metrics).collect();
    let names: Vec<String> = columns.first().map(|c| c.iter().map(|(n, _)| n.clone()).collect()).unwrap_or_default();
    let mut means = Vec::with_capacity(names.len());
    let mut stds = Vec::with_capacity(names.len());
    for j in 0..names.len() {
        let vals: Vec<Option<f64>> = columns.iter().map(|c| c[j].1).collect();
        means.push(mean(&vals));
        stds.push(std_dev(&vals));
    }
    (names, means, stds)
}

/// Top-level `summary.json` of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSetSummary {
    pub config_hash: String,
    pub seed: u64,
    pub repeats: usize,
    pub num_sellers: usize,
    pub num_rounds: usize,
    pub num_malicious: usize,
    pub aggregator: String,
    pub attack: String,
    pub mean: BTreeMap<String, Option<f64>>,
    pub std: BTreeMap<String, Option<f64>>,
    pub runs: Vec<RunSummary>,
}

impl RunSetSummary {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
