//! Per-block convergence trace as CSV.
//!
//! One row per block update, preceded by a row for the initial state
//! (`loop` 0, `block` `init`). `nnz_per_mode` is `;`-separated and empty
//! for dense activations.

use std::path::Path;

use krusco_core::FitTrace;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    #[serde(rename = "loop")]
    pub outer_loop: usize,
    pub block: String,
    pub objective: f64,
    pub residual: f64,
    pub l1: f64,
    pub ridge: f64,
    pub nnz: usize,
    pub nnz_per_mode: String,
    pub iterations: usize,
    pub seconds: f64,
}

/// Rows for a trace, with the initial state first.
pub fn rows(trace: &FitTrace) -> Vec<TraceRow> {
    let init = trace.initial;
    let mut out = vec![TraceRow {
        outer_loop: 0,
        block: "init".into(),
        objective: init.total,
        residual: init.residual,
        l1: init.l1,
        ridge: init.ridge,
        nnz: trace.initial_nnz,
        nnz_per_mode: join(&trace.initial_nnz_per_mode),
        iterations: 0,
        seconds: trace.init_seconds,
    }];
    out.extend(trace.blocks.iter().map(|b| TraceRow {
        outer_loop: b.outer_loop,
        block: b.block.to_string(),
        objective: b.objective.total,
        residual: b.objective.residual,
        l1: b.objective.l1,
        ridge: b.objective.ridge,
        nnz: b.nnz,
        nnz_per_mode: join(&b.nnz_per_mode),
        iterations: b.iterations,
        seconds: b.seconds,
    }));
    out
}

fn join(counts: &[usize]) -> String {
    counts
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_trace(path: &Path) -> CliResult<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<TraceRow>, _>>()
        .map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            TraceRow {
                outer_loop: 0,
                block: "init".into(),
                objective: 10.0,
                residual: 10.0,
                l1: 0.0,
                ridge: 0.0,
                nnz: 3,
                nnz_per_mode: String::new(),
                iterations: 0,
                seconds: 0.0,
            },
            TraceRow {
                outer_loop: 1,
                block: "mode2".into(),
                objective: 4.25,
                residual: 3.0,
                l1: 1.25,
                ridge: 0.0,
                nnz: 7,
                nnz_per_mode: "2;3;2".into(),
                iterations: 12,
                seconds: 0.5,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "loop,block,objective,residual,l1,ridge,nnz,nnz_per_mode,iterations,seconds\n"
        ));
        assert_eq!(read_trace(&path).unwrap(), rows);
    }
}
