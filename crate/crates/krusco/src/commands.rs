//! Subcommand implementations.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use krusco_core::{
    dense_alpha_max, fit_baseline_with_clock, fit_with_clock, generate_synthetic, init_dictionary,
    initial_alpha_max, Clock, DenseTensor, FitTrace, KcscConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::cli::{Cli, Command, FitArgs, MetricsArgs, ReconstructArgs, SynthArgs};
use crate::config::{FitPlan, RunConfig, SynthConfig, SynthManifest};
use crate::error::{CliError, CliResult};
use crate::metrics::MetricsReport;
use crate::model_io::{
    self, create_dir, load_model, write_json, Activations, Model, ModelFiles, ModelKind,
};
use crate::npy;
use crate::trace;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "KRUSCO_THREADS";

struct WallClock(Instant);

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Fit(a) => fit(&a),
        Command::Reconstruct(a) => reconstruct(&a),
        Command::Metrics(a) => metrics(&a),
    }
}

fn stdout_line(line: &str) {
    // A closed pipe is not worth failing a finished run over.
    let _ = writeln!(std::io::stdout(), "{line}");
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let file = match &args.config {
        Some(p) => SynthConfig::from_file(p)?,
        None => SynthConfig::default(),
    };
    let cfg = file.overlay(args.to_config());
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Config("no output directory: give --out".into()))?;
    let spec = cfg.spec();
    let seed = cfg.seed.unwrap_or(0);
    let act_shape = spec.act_shape()?;
    let truth = generate_synthetic(&spec, seed)?;
    create_dir(&out)?;
    npy::write_tensor(&out.join("y.npy"), &truth.y)?;
    let files = ModelFiles {
        kind: ModelKind::Kruskal,
        atoms: spec.atoms,
        rank: Some(spec.rank),
        atom_shape: spec.atom_shape.clone(),
        act_shape,
        dictionary_dir: "truth_dict".into(),
        activations_dir: "truth_acts".into(),
        alpha: None,
        beta: None,
    };
    let model = Model {
        files: files.clone(),
        dictionary: truth.dictionary,
        activations: Activations::Kruskal(truth.activations),
    };
    model_io::save_model_parts(&out, &model)?;
    let manifest = SynthManifest {
        signal: "y.npy".into(),
        signal_shape: spec.signal_shape.clone(),
        atom_shape: spec.atom_shape.clone(),
        atoms: spec.atoms,
        rank: spec.rank,
        density: spec.density,
        noise_sigma: spec.noise_sigma,
        seed,
        model: files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    stdout_line(&format!(
        "wrote {} (signal {:?}, {} atoms {:?}, rank {})",
        out.display(),
        spec.signal_shape,
        spec.atoms,
        spec.atom_shape,
        spec.rank
    ));
    Ok(())
}

/// Worker count from [`THREADS_ENV`], if set.
pub fn thread_limit() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!(
                "{THREADS_ENV}={v:?} is not a positive integer"
            ))),
        },
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("{THREADS_ENV}: {e}"))),
    }
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let file = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let cfg = file.overlay(args.to_config());
    let reports = run_fit(&cfg)?;
    for (rank, r) in reports {
        let label = rank.map_or("dense".to_string(), |r| format!("rank {r}"));
        stdout_line(&format!(
            "{label}: objective {:.6e}, l2 distance {:.6e} (relative {:.4e}), nnz {}",
            r.objective.total, r.l2_distance, r.relative_l2_distance, r.nnz_total
        ));
    }
    Ok(())
}

/// Run a merged configuration; returns the report of each fitted model,
/// keyed by rank (`None` for the dense baseline).
pub fn run_fit(cfg: &RunConfig) -> CliResult<Vec<(Option<usize>, MetricsReport)>> {
    let threads = thread_limit()?;
    let mut y = None;
    let mut plan = cfg.plan(|p| {
        let t = npy::read_tensor(p)?;
        let order = t.order();
        y = Some(t);
        Ok(order)
    })?;
    let y = y.expect("plan reads the signal");
    for w in &plan.warnings {
        eprintln!("warning: {w}");
    }
    plan.kcsc.validate(y.shape())?;
    if let Some(dir) = &plan.init_dict {
        plan.kcsc.initial_dictionary = Some(model_io::load_dictionary(dir, plan.kcsc.atoms)?);
    }
    create_dir(&plan.out)?;
    write_json(&plan.out.join("config.json"), cfg)?;

    if plan.baseline {
        let r = fit_dense(&y, &plan, &plan.out)?;
        return Ok(vec![(None, r)]);
    }
    if plan.ranks.len() == 1 {
        let r = fit_kruskal(&y, &plan, plan.ranks[0], &plan.out)?;
        return Ok(vec![(Some(plan.ranks[0]), r)]);
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let reports = pool.install(|| {
        plan.ranks
            .par_iter()
            .map(|&r| {
                let dir = plan.out.join(format!("rank_{r:02}"));
                fit_kruskal(&y, &plan, r, &dir).map(|m| (Some(r), m))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    write_sweep(&plan.out.join("sweep.csv"), &reports)?;
    Ok(reports)
}

#[derive(Serialize)]
struct SweepRow {
    rank: usize,
    objective: f64,
    l2_distance: f64,
    relative_l2_distance: f64,
    nnz_total: usize,
    param_count: usize,
}

fn write_sweep(path: &Path, reports: &[(Option<usize>, MetricsReport)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for (rank, r) in reports {
        w.serialize(SweepRow {
            rank: rank.unwrap_or(0),
            objective: r.objective.total,
            l2_distance: r.l2_distance,
            relative_l2_distance: r.relative_l2_distance,
            nnz_total: r.nnz_total,
            param_count: r.param_count,
        })
        .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn fit_kruskal(
    y: &DenseTensor,
    plan: &FitPlan,
    rank: usize,
    dir: &Path,
) -> CliResult<MetricsReport> {
    let mut cfg: KcscConfig = plan.kcsc.clone();
    cfg.rank = rank;
    if plan.relative_alpha {
        let amax = initial_alpha_max(y, &cfg)?;
        cfg.alpha = cfg.alpha.iter().zip(&amax).map(|(a, m)| a * m).collect();
    }
    let clock = WallClock(Instant::now());
    let res = fit_with_clock(y, &cfg, &clock)?;
    let seconds = clock.now();
    let model = Model {
        files: ModelFiles {
            kind: ModelKind::Kruskal,
            atoms: cfg.atoms,
            rank: Some(rank),
            atom_shape: cfg.atom_shape.clone(),
            act_shape: cfg.act_shape(y.shape()),
            dictionary_dir: "dictionary".into(),
            activations_dir: "activations".into(),
            alpha: Some(cfg.alpha.clone()),
            beta: Some(cfg.beta.clone()),
        },
        dictionary: res.dictionary,
        activations: Activations::Kruskal(res.activations),
    };
    write_fit(dir, y, &model, &res.trace, seconds)
}

fn fit_dense(y: &DenseTensor, plan: &FitPlan, dir: &Path) -> CliResult<MetricsReport> {
    let mut cfg = plan.kcsc.clone();
    let mut alpha = cfg.alpha[0];
    if plan.relative_alpha {
        let dict = match &cfg.initial_dictionary {
            Some(d) => d.clone(),
            None => init_dictionary(y, &cfg)?,
        };
        alpha *= dense_alpha_max(y, &dict)?;
    }
    cfg.baseline_alpha = Some(alpha);
    let clock = WallClock(Instant::now());
    let res = fit_baseline_with_clock(y, &cfg, &clock)?;
    let seconds = clock.now();
    let model = Model {
        files: ModelFiles {
            kind: ModelKind::Dense,
            atoms: cfg.atoms,
            rank: None,
            atom_shape: cfg.atom_shape.clone(),
            act_shape: cfg.act_shape(y.shape()),
            dictionary_dir: "dictionary".into(),
            activations_dir: "activations".into(),
            alpha: Some(vec![alpha]),
            beta: Some(vec![cfg.beta[0]]),
        },
        dictionary: res.dictionary,
        activations: Activations::Dense(res.activations),
    };
    write_fit(dir, y, &model, &res.trace, seconds)
}

fn write_fit(
    dir: &Path,
    y: &DenseTensor,
    model: &Model,
    trace: &FitTrace,
    seconds: f64,
) -> CliResult<MetricsReport> {
    create_dir(dir)?;
    model_io::save_model_parts(dir, model)?;
    write_json(&dir.join("model.json"), &model.files)?;
    trace::write_trace(&dir.join("trace.csv"), &trace::rows(trace))?;
    let report = MetricsReport::new(model, y, Some(trace), seconds)?;
    write_json(&dir.join("metrics.json"), &report)?;
    Ok(report)
}

/// Summary written next to `y_hat.npy`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ResidualStats {
    pub signal_shape: Vec<usize>,
    pub l2_distance: f64,
    pub relative_l2_distance: f64,
    pub signal_norm: f64,
    pub max_abs_residual: f64,
}

pub fn reconstruct(args: &ReconstructArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let y = npy::read_tensor(&args.input)?;
    let y_hat = model.reconstruct()?;
    if y_hat.shape() != y.shape() {
        return Err(CliError::Config(format!(
            "model reconstructs shape {:?}, signal has shape {:?}",
            y_hat.shape(),
            y.shape()
        )));
    }
    let r = y.sub(&y_hat)?;
    let signal_norm = y.norm();
    let l2 = r.norm();
    let stats = ResidualStats {
        signal_shape: y.shape().to_vec(),
        l2_distance: l2,
        relative_l2_distance: if signal_norm > 0.0 {
            l2 / signal_norm
        } else {
            0.0
        },
        signal_norm,
        max_abs_residual: r.as_slice().iter().fold(0.0, |m, v| m.max(v.abs())),
    };
    create_dir(&args.out)?;
    npy::write_tensor(&args.out.join("y_hat.npy"), &y_hat)?;
    write_json(&args.out.join("residual.json"), &stats)?;
    stdout_line(&format!(
        "l2 distance {:.6e} (relative {:.4e})",
        stats.l2_distance, stats.relative_l2_distance
    ));
    Ok(())
}

pub fn metrics(args: &MetricsArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut model = load_model(&args.model)?;
    let weights = match model.activations.kind() {
        ModelKind::Kruskal => model.files.act_shape.len(),
        ModelKind::Dense => 1,
    };
    for (name, src, dst) in [
        ("alpha", &args.alpha, &mut model.files.alpha),
        ("beta", &args.beta, &mut model.files.beta),
    ] {
        if let Some(v) = src {
            let v = match v.len() {
                1 => vec![v[0]; weights],
                n if n == weights => v.clone(),
                n => {
                    return Err(CliError::Config(format!(
                        "--{name} has {n} values; this model takes 1 or {weights}"
                    )))
                }
            };
            *dst = Some(v);
        }
    }
    let y = npy::read_tensor(&args.input)?;
    let report = MetricsReport::new(&model, &y, None, start.elapsed().as_secs_f64())?;
    match &args.out {
        Some(p) => write_json(p, &report),
        None => {
            let text =
                serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
            stdout_line(&text);
            Ok(())
        }
    }
}
