//! Line-delimited JSON trace files.
//!
//! A trace file holds one JSON object per line:
//!
//! * `{"record":"header", ...}` with config hash, seed, repeat, seller count, and roles;
//! * `{"record":"round", ...}` once per round, carrying the [`RoundLedger`] fields;
//! * `{"record":"final", ...}` with the final model's architecture and flat parameters.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::attack::SellerRole;
use crate::engine::{RoundLedger, RunTrace};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceRecord {
    Header {
        config_hash: String,
        seed: u64,
        repeat: usize,
        num_sellers: usize,
        roles: Vec<SellerRole>,
    },
    Round(RoundLedger),
    Final {
        model: String,
        hidden: Option<usize>,
        input_dim: usize,
        classes: usize,
        values: Vec<f64>,
    },
}

pub fn write_trace<W: Write>(trace: &RunTrace, mut out: W) -> Result<()> {
    let mut line = |record: &TraceRecord| -> Result<()> {
        serde_json::to_writer(&mut out, record).map_err(|e| Error::Trace(e.to_string()))?;
        out.write_all(b"\n")?;
        Ok(())
    };
    line(&TraceRecord::Header {
        config_hash: trace.config_hash.clone(),
        seed: trace.seed,
        repeat: trace.repeat,
        num_sellers: trace.num_sellers,
        roles: trace.roles.clone(),
    })?;
    for ledger in &trace.ledgers {
        line(&TraceRecord::Round(ledger.clone()))?;
    }
    let model = &trace.final_model;
    let (name, hidden) = match model.arch() {
        Architecture::Logreg => ("logreg", None),
        Architecture::Mlp { hidden } => ("mlp", Some(hidden)),
    };
    line(&TraceRecord::Final {
        model: name.into(),
        hidden,
        input_dim: model.input_dim(),
        classes: model.classes(),
        values: model.as_slice().to_vec(),
    })
}

pub fn read_trace<R: BufRead>(input: R) -> Result<RunTrace> {
    let mut header = None;
    let mut ledgers = Vec::new();
    let mut final_model = None;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord =
            serde_json::from_str(&line).map_err(|e| Error::Trace(format!("line {}: {e}", n + 1)))?;
        match record {
            TraceRecord::Header { .. } if header.is_some() => {
                return Err(Error::Trace(format!("line {}: duplicate header", n + 1)))
            }
            h @ TraceRecord::Header { .. } => header = Some(h),
            TraceRecord::Round(l) => ledgers.push(l),
            TraceRecord::Final { model, hidden, input_dim, classes, values } => {
                let arch = match (model.as_str(), hidden) {
                    ("logreg", _) => Architecture::Logreg,
                    ("mlp", Some(hidden)) => Architecture::Mlp { hidden },
                    _ => return Err(Error::Trace(format!("line {}: unknown model {model}", n + 1))),
                };
                final_model = Some(ModelParams::unflatten(arch, input_dim, classes, values)?);
            }
        }
    }
    let Some(TraceRecord::Header { config_hash, seed, repeat, num_sellers, roles }) = header else {
        return Err(Error::Trace("missing header".into()));
    };
    let final_model = final_model.ok_or_else(|| Error::Trace("missing final record".into()))?;
    for (i, l) in ledgers.iter().enumerate() {
        if l.round != i + 1 {
            return Err(Error::Trace(format!("round {} out of order", l.round)));
        }
    }
    Ok(RunTrace { config_hash, seed, repeat, num_sellers, roles, ledgers, final_model })
}
