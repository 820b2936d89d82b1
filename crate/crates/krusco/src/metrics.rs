//! Summary of a fitted model against a signal.

use krusco_core::{DenseTensor, FitTrace, ObjectiveBreakdown};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::model_io::{Model, ModelKind};

/// JSON schema that every `metrics.json` validates against.
pub const METRICS_SCHEMA: &str = include_str!("../schema/metrics.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub total: f64,
    pub residual: f64,
    pub l1: f64,
    pub ridge: f64,
}

impl From<ObjectiveBreakdown> for Objective {
    fn from(o: ObjectiveBreakdown) -> Self {
        Self {
            total: o.total,
            residual: o.residual,
            l1: o.l1,
            ridge: o.ridge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallSeconds {
    pub total: f64,
    pub per_loop: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: ModelKind,
    pub atoms: usize,
    pub rank: Option<usize>,
    pub signal_shape: Vec<usize>,
    pub atom_shape: Vec<usize>,
    pub act_shape: Vec<usize>,
    pub objective: Objective,
    pub l2_distance: f64,
    pub relative_l2_distance: f64,
    pub signal_norm: f64,
    pub nnz_per_mode: Vec<usize>,
    pub nnz_total: usize,
    pub param_count: usize,
    pub dense_param_count: usize,
    pub outer_loops: usize,
    pub converged: bool,
    pub wall_seconds: WallSeconds,
}

/// Objective of `model` on `y` with the penalty weights stored in the model
/// (zero when absent).
pub fn evaluate(model: &Model, y: &DenseTensor) -> CliResult<(Objective, DenseTensor)> {
    let y_hat = model.reconstruct()?;
    if y_hat.shape() != y.shape() {
        return Err(CliError::Config(format!(
            "model reconstructs shape {:?}, signal has shape {:?}",
            y_hat.shape(),
            y.shape()
        )));
    }
    let residual = y.sub(&y_hat)?.norm_sq();
    let weighted = |w: &Option<Vec<f64>>, v: Vec<f64>| -> f64 {
        match w {
            Some(w) => w.iter().zip(&v).map(|(a, b)| a * b).sum(),
            None => 0.0,
        }
    };
    let l1 = weighted(&model.files.alpha, model.activations.l1_norm());
    let ridge = weighted(&model.files.beta, model.activations.sq_norm());
    Ok((
        Objective {
            total: residual + l1 + ridge,
            residual,
            l1,
            ridge,
        },
        y_hat,
    ))
}

impl MetricsReport {
    pub fn new(
        model: &Model,
        y: &DenseTensor,
        trace: Option<&FitTrace>,
        seconds: f64,
    ) -> CliResult<Self> {
        let (objective, y_hat) = evaluate(model, y)?;
        let l2 = y.sub(&y_hat)?.norm();
        let signal_norm = y.norm();
        let report = Self {
            kind: model.files.kind,
            atoms: model.files.atoms,
            rank: model.files.rank,
            signal_shape: y.shape().to_vec(),
            atom_shape: model.files.atom_shape.clone(),
            act_shape: model.files.act_shape.clone(),
            objective,
            l2_distance: l2,
            relative_l2_distance: if signal_norm > 0.0 {
                l2 / signal_norm
            } else {
                0.0
            },
            signal_norm,
            nnz_per_mode: model.activations.nnz_per_mode(),
            nnz_total: model.activations.nnz(),
            param_count: model.activations.param_count(),
            dense_param_count: model.activations.dense_param_count(),
            outer_loops: trace.map_or(0, |t| t.loops.len()),
            converged: trace.is_some_and(|t| t.converged),
            wall_seconds: WallSeconds {
                total: seconds,
                per_loop: trace.map_or(Vec::new(), |t| t.loops.iter().map(|l| l.seconds).collect()),
            },
        };
        report.check()?;
        Ok(report)
    }

    fn check(&self) -> CliResult<()> {
        let o = &self.objective;
        let values = [
            o.total,
            o.residual,
            o.l1,
            o.ridge,
            self.l2_distance,
            self.relative_l2_distance,
            self.signal_norm,
            self.wall_seconds.total,
        ];
        if values
            .iter()
            .chain(&self.wall_seconds.per_loop)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(CliError::Numerical(format!(
                "metrics contain a negative or non-finite value: {values:?}"
            )));
        }
        Ok(())
    }
}
