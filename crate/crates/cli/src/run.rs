use std::collections::BTreeMap;
use std::path::Path;

use gradmarket_core::config::{load_config_with_overrides, MarketplaceConfig};
use gradmarket_core::engine::run_repeats;
use gradmarket_core::metrics::{compute_report, MetricsReport};
use gradmarket_core::trace::write_trace;

use crate::output::{aggregate_columns, io_err, metrics_csv, write_atomic, write_json, RunSetSummary};
use crate::CliError;

/// Parse a config file with `--set` overrides and an optional seed override.
pub fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<MarketplaceConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut all = overrides.to_vec();
    if let Some(seed) = seed {
        all.push(format!("seed={seed}"));
    }
    Ok(load_config_with_overrides(&text, &all)?)
}

/// Run every repeat of `config` and write the run directory.
pub fn execute(config: &MarketplaceConfig, out: &Path) -> Result<RunSetSummary, CliError> {
    let traces = run_repeats(config).map_err(|e| CliError::Runtime(e.to_string()))?;
    let reports: Vec<MetricsReport> = traces.iter().map(|t| compute_report(t, &config.milestones)).collect();

    for (trace, report) in traces.iter().zip(&reports) {
        let dir = out.join(format!("repeat-{:03}", trace.repeat));
        let mut buf = Vec::new();
        write_trace(trace, &mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_atomic(&dir.join("trace.jsonl"), &buf)?;
        write_atomic(&dir.join("metrics.csv"), &metrics_csv(&[report], false)?)?;
        write_json(&dir.join("summary.json"), &report.summary)?;
    }

    let runs: Vec<_> = reports.iter().map(|r| r.summary.clone()).collect();
    let (names, means, stds) = aggregate_columns(&runs);
    let summary = RunSetSummary {
        config_hash: config.config_hash(),
        seed: config.seed,
        repeats: config.repeats,
        num_sellers: config.num_sellers,
        num_rounds: config.num_rounds,
        num_malicious: config.malicious_count(),
        aggregator: config.aggregator.kind.name().into(),
        attack: config.attack.kind.name().into(),
        mean: names.iter().cloned().zip(means).collect::<BTreeMap<_, _>>(),
        std: names.into_iter().zip(stds).collect(),
        runs,
    };
    let refs: Vec<&MetricsReport> = reports.iter().collect();
    write_atomic(&out.join("config.yaml"), config.to_yaml().as_bytes())?;
    write_atomic(&out.join("metrics.csv"), &metrics_csv(&refs, true)?)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn cmd_run(path: &Path, overrides: &[String], seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let config = load(path, overrides, seed)?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let summary = execute(&config, out)?;
    let show = |key: &str| {
        summary.mean.get(key).copied().flatten().map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
    };
    println!(
        "accuracy={} asr={} total_cost={} repeats={} out={}",
        show("final_accuracy"),
        show("final_asr"),
        show("total_cost"),
        summary.repeats,
        out.display()
    );
    Ok(())
}
