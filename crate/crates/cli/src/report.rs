//! Static plots and tidy CSVs from sweep grids or run summaries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::output::{fmt_opt, mean, write_atomic, RunSetSummary};
use crate::svg::{bar_chart, line_chart, BarGroup, Series};
use crate::CliError;

const ADVERSARY_FIELD: &str = "attack.adversary_fraction";

struct Plot {
    name: &'static str,
    svg: String,
    /// Tidy rows: series, x, metric, value.
    rows: Vec<[String; 4]>,
}

fn malformed(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn tidy_csv(rows: &[[String; 4]]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(["series", "x", "metric", "value"]).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

/// Mean rows of a grid, keyed by column name.
struct Grid {
    axes: Vec<String>,
    columns: Vec<String>,
    rows: Vec<BTreeMap<String, String>>,
}

fn read_grid(path: &Path) -> Result<Grid, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(path, e))?;
    let headers: Vec<String> = reader.headers().map_err(|e| malformed(path, e))?.iter().map(String::from).collect();
    let pos = |name: &str| headers.iter().position(|h| h == name);
    let (Some(rep), Some(hash)) = (pos("repeat"), pos("config_hash")) else {
        return Err(malformed(path, "missing repeat or config_hash column"));
    };
    if pos("status").is_none() || rep > hash {
        return Err(malformed(path, "not a grid file"));
    }
    let axes = headers[rep + 1..hash].to_vec();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(path, e))?;
        let row: BTreeMap<String, String> = headers.iter().cloned().zip(record.iter().map(String::from)).collect();
        if row.get("status").map(String::as_str) == Some("ok") && row.get("repeat").map(String::as_str) == Some("mean") {
            rows.push(row);
        }
    }
    Ok(Grid { axes, columns: headers, rows })
}

fn num(row: &BTreeMap<String, String>, key: &str) -> Option<f64> {
    row.get(key).and_then(|v| v.parse::<f64>().ok())
}

fn has_values(grid: &Grid, key: &str) -> bool {
    grid.columns.iter().any(|c| c == key) && grid.rows.iter().any(|r| num(r, key).is_some())
}

fn grid_plots(grid: &Grid) -> Vec<Plot> {
    let x_axis = grid.axes.iter().find(|a| a.as_str() == ADVERSARY_FIELD).cloned();
    let group_axes: Vec<&String> = grid.axes.iter().filter(|a| Some(*a) != x_axis.as_ref()).collect();
    let x_label = x_axis.clone().unwrap_or_else(|| "cell".into());
    let x_of = |r: &BTreeMap<String, String>| match &x_axis {
        Some(a) => num(r, a).unwrap_or(f64::NAN),
        None => num(r, "cell").unwrap_or(f64::NAN),
    };
    let group_of = |r: &BTreeMap<String, String>| {
        if group_axes.is_empty() {
            "all".to_string()
        } else {
            group_axes.iter().map(|a| r.get(*a).cloned().unwrap_or_default()).collect::<Vec<_>>().join("/")
        }
    };
    let mut groups: Vec<String> = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for r in &grid.rows {
        let g = group_of(r);
        if !groups.contains(&g) {
            groups.push(g);
        }
        let x = x_of(r);
        if !xs.iter().any(|v| v.to_bits() == x.to_bits()) {
            xs.push(x);
        }
    }
    xs.sort_by(f64::total_cmp);
    let lookup = |g: &str, x: f64, key: &str| {
        grid.rows
            .iter()
            .find(|r| group_of(r) == g && x_of(r).to_bits() == x.to_bits())
            .and_then(|r| num(r, key))
    };

    let mut plots = Vec::new();
    let mut line_plot = |name: &'static str, title: &str, y_label: &str, metrics: &[&str]| {
        let mut series = Vec::new();
        let mut rows = Vec::new();
        for g in &groups {
            for m in metrics.iter().filter(|m| has_values(grid, m)) {
                let points: Vec<(f64, f64)> = xs.iter().filter_map(|&x| lookup(g, x, m).map(|v| (x, v))).collect();
                for (x, v) in &points {
                    rows.push([g.clone(), x.to_string(), m.to_string(), v.to_string()]);
                }
                series.push(Series { name: format!("{g} {m}"), points });
            }
        }
        plots.push(Plot { name, svg: line_chart(title, &x_label, y_label, &series), rows });
    };
    line_plot("accuracy_asr", "Accuracy and ASR", "rate", &["final_accuracy", "final_asr"]);
    line_plot("gini", "Benign payment Gini", "Gini", &["payment_gini"]);

    let mut bar_plot = |name: &'static str, title: &str, y_label: &str, metrics: Vec<String>, stacked: bool, by_x: bool| {
        let metrics: Vec<String> = metrics.into_iter().filter(|m| has_values(grid, m)).collect();
        let mut rows = Vec::new();
        let (names, bars): (Vec<String>, Vec<BarGroup>) = if by_x {
            let names: Vec<String> = groups.iter().flat_map(|g| metrics.iter().map(move |m| format!("{g} {m}"))).collect();
            let bars = xs
                .iter()
                .map(|&x| BarGroup {
                    label: tick_label(x),
                    values: groups.iter().flat_map(|g| metrics.iter().map(move |m| (g, m))).map(|(g, m)| lookup(g, x, m)).collect(),
                })
                .collect();
            (names, bars)
        } else {
            let bars = groups
                .iter()
                .flat_map(|g| xs.iter().map(move |&x| (g, x)))
                .map(|(g, x)| BarGroup {
                    label: if xs.len() > 1 { format!("{g} {}", tick_label(x)) } else { g.clone() },
                    values: metrics.iter().map(|m| lookup(g, x, m)).collect(),
                })
                .collect();
            (metrics.clone(), bars)
        };
        for g in &groups {
            for &x in &xs {
                for m in &metrics {
                    if let Some(v) = lookup(g, x, m) {
                        rows.push([g.clone(), x.to_string(), m.clone(), v.to_string()]);
                    }
                }
            }
        }
        plots.push(Plot { name, svg: bar_chart(title, y_label, &names, &bars, stacked), rows });
    };
    bar_plot("selection_rate", "Per-seller selection rate", "rate", vec!["bsr".into(), "msr_rate".into()], false, false);
    let milestone_cols: Vec<String> = grid.columns.iter().filter(|c| c.starts_with("gradients_to_")).cloned().collect();
    bar_plot("milestones", "Gradients to milestone", "gradients", milestone_cols, false, true);
    bar_plot("cost_composition", "Mean selections per round", "gradients", vec!["cost_benign".into(), "cost_malicious".into()], true, false);
    plots
}

fn tick_label(x: f64) -> String {
    if x.is_finite() { x.to_string() } else { "n/a".into() }
}

/// Per-round mean accuracy and ASR across repeats from a run's metrics.csv.
type Points = Vec<(f64, f64)>;

fn round_curves(path: &Path) -> Result<(Points, Points), CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(path, e))?;
    let headers = reader.headers().map_err(|e| malformed(path, e))?.clone();
    let col = |n: &str| headers.iter().position(|h| h == n).ok_or_else(|| malformed(path, format!("missing {n} column")));
    let (round, acc, asr) = (col("round")?, col("accuracy")?, col("asr")?);
    let mut by_round: BTreeMap<usize, [Vec<Option<f64>>; 2]> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(path, e))?;
        let t: usize = record[round].parse().map_err(|e| malformed(path, e))?;
        let entry = by_round.entry(t).or_default();
        entry[0].push(record[acc].parse().ok());
        entry[1].push(record[asr].parse().ok());
    }
    let mut a = Vec::new();
    let mut s = Vec::new();
    for (t, [accs, asrs]) in by_round {
        if let Some(v) = mean(&accs) {
            a.push((t as f64, v));
        }
        if let Some(v) = mean(&asrs) {
            s.push((t as f64, v));
        }
    }
    Ok((a, s))
}

fn summary_plots(summary: &RunSetSummary, metrics: Option<&Path>) -> Result<Vec<Plot>, CliError> {
    let m = |k: &str| summary.mean.get(k).copied().flatten();
    let mut plots = Vec::new();

    let (acc, asr) = match metrics {
        Some(p) => round_curves(p)?,
        None => (
            summary.runs.iter().filter_map(|r| r.final_accuracy.map(|v| (r.repeat as f64, v))).collect(),
            summary.runs.iter().filter_map(|r| r.final_asr.map(|v| (r.repeat as f64, v))).collect(),
        ),
    };
    let x_label = if metrics.is_some() { "round" } else { "repeat" };
    let mut rows: Vec<[String; 4]> = acc.iter().map(|(x, v)| ["run".into(), x.to_string(), "accuracy".into(), v.to_string()]).collect();
    let mut series = vec![Series { name: "accuracy".into(), points: acc }];
    if !asr.is_empty() {
        rows.extend(asr.iter().map(|(x, v)| ["run".into(), x.to_string(), "asr".into(), v.to_string()]));
        series.push(Series { name: "asr".into(), points: asr });
    }
    plots.push(Plot { name: "accuracy_asr", svg: line_chart("Accuracy and ASR", x_label, "rate", &series), rows });

    let single = |name: &'static str, title: &str, y_label: &str, keys: Vec<String>, stacked: bool| {
        let keys: Vec<String> = keys.into_iter().filter(|k| m(k).is_some()).collect();
        let rows = keys.iter().map(|k| ["run".to_string(), String::new(), k.clone(), fmt_opt(m(k))]).collect();
        let group = BarGroup { label: summary.aggregator.clone(), values: keys.iter().map(|k| m(k)).collect() };
        Plot { name, svg: bar_chart(title, y_label, &keys, &[group], stacked), rows }
    };
    plots.push(single("selection_rate", "Per-seller selection rate", "rate", vec!["bsr".into(), "msr_rate".into()], false));
    let milestones: Vec<String> = summary.mean.keys().filter(|k| k.starts_with("gradients_to_")).cloned().collect();
    plots.push(single("milestones", "Gradients to milestone", "gradients", milestones, false));
    plots.push(single("gini", "Benign payment Gini", "Gini", vec!["payment_gini".into()], false));
    plots.push(single(
        "cost_composition",
        "Mean selections per round",
        "gradients",
        vec!["cost_benign".into(), "cost_malicious".into()],
        true,
    ));
    Ok(plots)
}

fn plots_for(input: &Path) -> Result<Vec<Plot>, CliError> {
    let (file, dir): (PathBuf, PathBuf) = if input.is_dir() {
        let grid = input.join("grid.csv");
        let file = if grid.exists() { grid } else { input.join("summary.json") };
        (file, input.to_path_buf())
    } else {
        (input.to_path_buf(), input.parent().unwrap_or(Path::new(".")).to_path_buf())
    };
    if !file.exists() {
        return Err(CliError::Config(format!("{}: no such input", file.display())));
    }
    match file.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(grid_plots(&read_grid(&file)?)),
        Some("json") => {
            let summary = RunSetSummary::read(&file)?;
            let metrics = dir.join("metrics.csv");
            summary_plots(&summary, metrics.exists().then_some(metrics.as_path()))
        }
        _ => Err(CliError::Config(format!("{}: expected grid.csv or summary.json", file.display()))),
    }
}

pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut all = Vec::with_capacity(inputs.len());
    for input in inputs {
        all.push(plots_for(input)?);
    }
    for (i, plots) in all.iter().enumerate() {
        let dir = if inputs.len() == 1 { out.join("plots") } else { out.join("plots").join(format!("input-{i}")) };
        for plot in plots {
            write_atomic(&dir.join(format!("{}.svg", plot.name)), plot.svg.as_bytes())?;
            write_atomic(&dir.join(format!("{}.csv", plot.name)), &tidy_csv(&plot.rows)?)?;
        }
    }
    println!("plots={} out={}", all.iter().map(Vec::len).sum::<usize>(), out.join("plots").display());
    Ok(())
}
