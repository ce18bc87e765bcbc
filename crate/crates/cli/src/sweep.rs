//! Cross-product sweeps over config fields.
//!
//! A sweep file is YAML:
//!
//! ```yaml
//! base: base.yaml            # relative to this file; or `base_config:` inline
//! axes:
//!   - field: attack.adversary_fraction
//!     values: [0.2, 0.3, 0.4]
//!   - field: aggregator
//!     values: [fedavg, fltrust, martfl, skymask]
//! max_cells: 256
//! ```

use std::path::{Path, PathBuf};

use gradmarket_core::config::{load_config, set_path, set_path_value, MarketplaceConfig};
use rayon::prelude::*;
use serde::Deserialize;
use serde_yaml::Value;

use crate::output::{aggregate_columns, fmt_opt, scalar_metrics, write_atomic, RunSetSummary};
use crate::run::execute;
use crate::CliError;

pub const DEFAULT_MAX_CELLS: usize = 256;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub field: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub base: Option<PathBuf>,
    #[serde(default)]
    pub base_config: Option<Value>,
    #[serde(default)]
    pub axes: Vec<Axis>,
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
}

fn default_max_cells() -> usize {
    DEFAULT_MAX_CELLS
}

/// One point of the cross product.
#[derive(Debug, Clone)]
pub struct Cell {
    pub index: usize,
    pub values: Vec<Value>,
    /// Invalid cell configs are kept so the grid can report them.
    pub config: Result<MarketplaceConfig, String>,
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Null => String::new(),
        other => serde_yaml::to_string(other).unwrap_or_default().trim().to_string(),
    }
}

fn load_spec(path: &Path) -> Result<(SweepSpec, Value), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let spec: SweepSpec =
        serde_yaml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = match (&spec.base, &spec.base_config) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either base or base_config, not both".into())),
        (Some(rel), None) => {
            let full = path.parent().unwrap_or(Path::new(".")).join(rel);
            let text = std::fs::read_to_string(&full)
                .map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?;
            serde_yaml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?
        }
        (None, Some(v)) => v.clone(),
        (None, None) => Value::Mapping(Default::default()),
    };
    let base = if base.is_null() { Value::Mapping(Default::default()) } else { base };
    Ok((spec, base))
}

/// Expand the sweep into cells; unknown field paths fail the whole sweep.
pub fn expand(spec: &SweepSpec, base: &Value, overrides: &[String]) -> Result<Vec<Cell>, CliError> {
    let total = spec.axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.values.len()));
    let total = total.ok_or_else(|| CliError::Config("sweep too large".into()))?;
    if total > spec.max_cells {
        return Err(CliError::Config(format!("sweep has {total} cells, above max_cells {}", spec.max_cells)));
    }
    let known = serde_yaml::to_value(load_config("{}")?).map_err(|e| CliError::Config(e.to_string()))?;
    for axis in &spec.axes {
        let top = axis.field.split('.').next().unwrap_or_default();
        if known.get(top).is_none() {
            return Err(CliError::Config(format!("unknown sweep field {:?}", axis.field)));
        }
        if axis.values.is_empty() {
            return Err(CliError::Config(format!("axis {:?} has no values", axis.field)));
        }
    }
    let mut base = base.clone();
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
        set_path(&mut base, key.trim(), value.trim())?;
    }
    let mut cells = Vec::with_capacity(total);
    for index in 0..total {
        let mut rem = index;
        let mut values = vec![Value::Null; spec.axes.len()];
        for (j, axis) in spec.axes.iter().enumerate().rev() {
            values[j] = axis.values[rem % axis.values.len()].clone();
            rem /= axis.values.len();
        }
        let mut doc = base.clone();
        for (axis, v) in spec.axes.iter().zip(&values) {
            set_path_value(&mut doc, &axis.field, v.clone())?;
        }
        let text = serde_yaml::to_string(&doc).map_err(|e| CliError::Config(e.to_string()))?;
        let config = load_config(&text).map_err(|e| e.to_string());
        cells.push(Cell { index, values, config });
    }
    Ok(cells)
}

fn cell_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("cell-{index:03}"))
}

/// Reuse a finished cell whose summary matches the config hash.
fn cached(out: &Path, cell: &Cell) -> Option<RunSetSummary> {
    let path = cell_dir(out, cell.index).join("summary.json");
    let config = cell.config.as_ref().ok()?;
    let summary = RunSetSummary::read(&path).ok()?;
    (summary.config_hash == config.config_hash()).then_some(summary)
}

pub fn grid_csv(spec: &SweepSpec, cells: &[Cell], results: &[Result<RunSetSummary, String>]) -> Result<Vec<u8>, CliError> {
    let mut names: Vec<String> = Vec::new();
    for s in results.iter().flatten() {
        for run in &s.runs {
            for (n, _) in scalar_metrics(run) {
                if !names.contains(&n) {
                    names.push(n);
                }
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["cell".into(), "status".into(), "repeat".into()];
    header.extend(spec.axes.iter().map(|a| a.field.clone()));
    header.push("config_hash".into());
    header.extend(names.iter().cloned());
    header.push("error".into());
    let err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(&header).map_err(err)?;

    for (cell, result) in cells.iter().zip(results) {
        let prefix = |status: &str, repeat: String| {
            let mut row = vec![cell.index.to_string(), status.to_string(), repeat];
            row.extend(cell.values.iter().map(scalar_text));
            row.push(cell.config.as_ref().map(MarketplaceConfig::config_hash).unwrap_or_default());
            row
        };
        match result {
            Ok(summary) => {
                let lookup = |pairs: Vec<(String, Option<f64>)>| -> Vec<String> {
                    names
                        .iter()
                        .map(|n| fmt_opt(pairs.iter().find(|(k, _)| k == n).and_then(|(_, v)| *v)))
                        .collect()
                };
                for run in &summary.runs {
                    let mut row = prefix("ok", run.repeat.to_string());
                    row.extend(lookup(scalar_metrics(run)));
                    row.push(String::new());
                    w.write_record(&row).map_err(err)?;
                }
                let (cols, means, stds) = aggregate_columns(&summary.runs);
                for (label, vals) in [("mean", means), ("std", stds)] {
                    let mut row = prefix("ok", label.into());
                    row.extend(lookup(cols.iter().cloned().zip(vals).collect()));
                    row.push(String::new());
                    w.write_record(&row).map_err(err)?;
                }
            }
            Err(message) => {
                let mut row = prefix("failed", String::new());
                row.extend(names.iter().map(|_| String::new()));
                row.push(message.clone());
                w.write_record(&row).map_err(err)?;
            }
        }
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn cmd_sweep(path: &Path, overrides: &[String], seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let (spec, base) = load_spec(path)?;
    let mut overrides = overrides.to_vec();
    if let Some(seed) = seed {
        overrides.push(format!("seed={seed}"));
    }
    let cells = expand(&spec, &base, &overrides)?;
    let outcomes: Vec<(Result<RunSetSummary, String>, bool)> = cells
        .par_iter()
        .map(|cell| {
            let config = match &cell.config {
                Ok(c) => c,
                Err(e) => return (Err(e.clone()), false),
            };
            match cached(out, cell) {
                Some(summary) => (Ok(summary), true),
                None => (execute(config, &cell_dir(out, cell.index)).map_err(|e| e.to_string()), false),
            }
        })
        .collect();
    let reused = outcomes.iter().filter(|(_, r)| *r).count();
    let results: Vec<Result<RunSetSummary, String>> = outcomes.into_iter().map(|(r, _)| r).collect();
    write_atomic(&out.join("grid.csv"), &grid_csv(&spec, &cells, &results)?)?;

    let failed = results.iter().filter(|r| r.is_err()).count();
    println!("cells={} failed={} reused={} out={}", cells.len(), failed, reused, out.display());
    if failed > 0 {
        for (cell, r) in cells.iter().zip(&results) {
            if let Err(e) = r {
                eprintln!("cell {}: {e}", cell.index);
            }
        }
        return Err(CliError::CellsFailed { failed, total: cells.len() });
    }
    Ok(())
}
