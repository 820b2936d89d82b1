//! Alternating minimization over activation modes and the dictionary.
//!
//! Each outer loop solves the Z-block of every mode in ascending order,
//! warm-started from the current factors and followed by a rebalance, then
//! runs the D-step. Every block update is recorded in a [`FitTrace`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::conv::{correlate_auto, ConvPolicy};
use crate::dict_solver::{project_unit_ball, update_dictionary_with, DICT_BUDGET};
use crate::error::{Error, Result};
use crate::math;
use crate::mode_solver::{alpha_max, build_mode_problem, solve_mode, SolveBudget};
use crate::model::{
    check_pairing, objective, reconstruct_dense, synthesize, ActivationSet, Dictionary,
    ObjectiveBreakdown, Penalty,
};
use crate::prox::{fista, power_iteration, ProxProblem, LIPSCHITZ_SAFETY};
use crate::tensor::{DenseTensor, FactorMatrix, KruskalTensor};

/// Redraws allowed when a patch of a sparse signal is all zero.
const MAX_PATCH_DRAWS: usize = 100;
const DICT_STREAM: u64 = 0;
const ACTS_STREAM: u64 = 1;
const NOISE_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Zero-padding applied to `Y` before drawing initial atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitPadding {
    /// Patches are drawn from `Y` itself.
    None,
    /// `⌊w_l / 2⌋` zeros on both sides of every mode.
    #[default]
    HalfAtom,
}

impl InitPadding {
    /// `y` padded for atoms of shape `w`.
    pub fn apply(self, y: &DenseTensor, w: &[usize]) -> Result<DenseTensor> {
        match self {
            InitPadding::None => Ok(y.clone()),
            InitPadding::HalfAtom => {
                let pad: Vec<usize> = w.iter().map(|w| w / 2).collect();
                y.pad(&pad, &pad)
            }
        }
    }
}

/// Starting point of the activation factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActivationInit {
    /// Mode-0 factors zero, other modes random unit-norm columns.
    Random,
    /// Greedy rank-`R` CP approximation of a dense L1 fit of each activation
    /// tensor for the initial dictionary. Terms the approximation leaves
    /// empty start as in `Random`.
    #[default]
    DenseCp,
}

/// L1 weight of the dense fit behind [`ActivationInit::DenseCp`], as a
/// fraction of [`dense_alpha_max`].
pub const DENSE_INIT_ALPHA: f64 = 0.01;

const INIT_BUDGET: SolveBudget = SolveBudget::new(100, 1e-6);

/// Column normalization applied after each Z-block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RebalanceRule {
    /// Unit-norm columns for modes `1..p`, magnitude folded into mode 0.
    UnitNorm,
    /// Per rank-one term, the rescaling with product one that minimizes the
    /// penalty. Uses unit-norm scales when some mode carries no penalty, and
    /// skips any rescaling that would raise the penalty.
    #[default]
    Balanced,
}

/// Configuration of [`fit`] and [`fit_baseline`].
#[derive(Debug, Clone, PartialEq)]
pub struct KcscConfig {
    pub atoms: usize,
    pub rank: usize,
    pub atom_shape: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub outer_loops: usize,
    /// Stop when the relative objective change over a loop falls below this.
    pub outer_tol: f64,
    pub mode_budget: SolveBudget,
    pub dict_budget: SolveBudget,
    pub seed: u64,
    /// Run the D-step; off keeps the initial dictionary.
    pub update_dictionary: bool,
    /// Start from this dictionary instead of signal patches.
    pub initial_dictionary: Option<Dictionary>,
    /// Start from these activations instead of `activation_init`.
    pub initial_activations: Option<ActivationSet>,
    pub init_padding: InitPadding,
    pub activation_init: ActivationInit,
    pub rebalance: RebalanceRule,
    /// L1 weight of the dense baseline; `alpha[0]` when unset.
    pub baseline_alpha: Option<f64>,
}

impl KcscConfig {
    /// Defaults: β = 0, 30 outer loops, tolerance 1e-6.
    pub fn new(atoms: usize, rank: usize, atom_shape: Vec<usize>, alpha: Vec<f64>) -> Self {
        let p = atom_shape.len();
        Self {
            atoms,
            rank,
            atom_shape,
            alpha,
            beta: vec![0.0; p],
            outer_loops: 30,
            outer_tol: 1e-6,
            mode_budget: SolveBudget::default(),
            dict_budget: DICT_BUDGET,
            seed: 0,
            update_dictionary: true,
            initial_dictionary: None,
            initial_activations: None,
            init_padding: InitPadding::default(),
            activation_init: ActivationInit::default(),
            rebalance: RebalanceRule::default(),
            baseline_alpha: None,
        }
    }

    /// Check the configuration against a signal of shape `y_shape`.
    pub fn validate(&self, y_shape: &[usize]) -> Result<()> {
        let p = y_shape.len();
        if self.atoms == 0 || self.rank == 0 {
            return Err(Error::InvalidArgument(format!(
                "atom count and rank must be at least 1, got K={} R={}",
                self.atoms, self.rank
            )));
        }
        if self.atom_shape.len() != p || self.alpha.len() != p || self.beta.len() != p {
            return Err(Error::Shape(format!(
                "signal has {p} modes; atom shape, alpha and beta have {}, {} and {}",
                self.atom_shape.len(),
                self.alpha.len(),
                self.beta.len()
            )));
        }
        for (l, (w, n)) in self.atom_shape.iter().zip(y_shape).enumerate() {
            if *w == 0 || w > n {
                return Err(Error::Shape(format!(
                    "mode {}: atom extent {w} must be in 1..={n}",
                    l + 1
                )));
            }
        }
        Penalty::new(self.alpha.clone(), self.beta.clone())?;
        if let Some(a) = self.baseline_alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "baseline alpha must be finite and nonnegative, got {a}"
                )));
            }
        }
        if self.outer_tol.is_nan() || self.outer_tol < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "outer tolerance must be nonnegative, got {}",
                self.outer_tol
            )));
        }
        if let Some(d) = &self.initial_dictionary {
            if d.len() != self.atoms || d.atom_shape() != self.atom_shape.as_slice() {
                return Err(Error::Shape(format!(
                    "initial dictionary has {} atoms of shape {:?}, expected {} of {:?}",
                    d.len(),
                    d.atom_shape(),
                    self.atoms,
                    self.atom_shape
                )));
            }
        }
        if let Some(a) = &self.initial_activations {
            let m = self.act_shape(y_shape);
            if a.len() != self.atoms || a.rank() != self.rank || a.shape() != m {
                return Err(Error::Shape(format!(
                    "initial activations have {} entries of rank {} and shape {:?}, expected {} of rank {} and shape {m:?}",
                    a.len(),
                    a.rank(),
                    a.shape(),
                    self.atoms,
                    self.rank
                )));
            }
        }
        Ok(())
    }

    /// Activation extents `m = n − w + 1`.
    pub fn act_shape(&self, y_shape: &[usize]) -> Vec<usize> {
        y_shape
            .iter()
            .zip(&self.atom_shape)
            .map(|(n, w)| n - w + 1)
            .collect()
    }

    fn penalty(&self) -> Result<Penalty> {
        Penalty::new(self.alpha.clone(), self.beta.clone())
    }
}

/// Wall-clock source, in seconds. The core has no clock of its own.
pub trait Clock {
    fn now(&self) -> f64;
}

/// A clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Z-block of a mode (0-based).
    Mode(usize),
    Dictionary,
    /// Dense activation block of the baseline.
    Dense,
}

impl core::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            BlockKind::Mode(l) => write!(f, "mode{}", l + 1),
            BlockKind::Dictionary => f.write_str("dict"),
            BlockKind::Dense => f.write_str("dense"),
        }
    }
}

/// State after one block update.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRecord {
    /// 1-based outer loop index.
    pub outer_loop: usize,
    pub block: BlockKind,
    pub objective: ObjectiveBreakdown,
    /// `‖Y − Ŷ‖_F`
    pub residual_norm: f64,
    /// Nonzero factor entries per mode; empty for dense activations.
    pub nnz_per_mode: Vec<usize>,
    pub nnz: usize,
    pub seconds: f64,
    pub iterations: usize,
}

/// Totals of one outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopRecord {
    pub outer_loop: usize,
    pub objective: f64,
    pub relative_change: f64,
    pub nnz: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub initial: ObjectiveBreakdown,
    /// Nonzero counts of the starting activations.
    pub initial_nnz: usize,
    pub initial_nnz_per_mode: Vec<usize>,
    /// Time spent building the starting state.
    pub init_seconds: f64,
    pub blocks: Vec<BlockRecord>,
    pub loops: Vec<LoopRecord>,
    /// Corner of each initial atom in the padded signal; empty when the
    /// dictionary was supplied.
    pub init_positions: Vec<Vec<usize>>,
    pub converged: bool,
}

impl FitTrace {
    fn new(initial: ObjectiveBreakdown, init_positions: Vec<Vec<usize>>) -> Self {
        Self {
            initial,
            initial_nnz: 0,
            initial_nnz_per_mode: Vec::new(),
            init_seconds: 0.0,
            blocks: Vec::new(),
            loops: Vec::new(),
            init_positions,
            converged: false,
        }
    }

    /// Objective after each block, preceded by the initial value.
    pub fn objective_series(&self) -> Vec<f64> {
        core::iter::once(self.initial.total)
            .chain(self.blocks.iter().map(|b| b.objective.total))
            .collect()
    }

    /// Final objective breakdown.
    pub fn last(&self) -> ObjectiveBreakdown {
        self.blocks.last().map_or(self.initial, |b| b.objective)
    }

    pub fn total_seconds(&self) -> f64 {
        self.init_seconds + self.loops.iter().map(|l| l.seconds).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub dictionary: Dictionary,
    pub activations: ActivationSet,
    pub trace: FitTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    pub dictionary: Dictionary,
    pub activations: Vec<DenseTensor>,
    pub trace: FitTrace,
}

fn with_context(e: Error, ctx: &str) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("{ctx}: {msg}")),
        other => other,
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Initial atoms: `K` patches of the padded signal at seeded uniform
/// positions, each projected onto the unit ball. All-zero patches are
/// redrawn.
pub fn init_dictionary(y: &DenseTensor, cfg: &KcscConfig) -> Result<Dictionary> {
    init_dictionary_with_positions(y, cfg).map(|(d, _)| d)
}

/// [`init_dictionary`] together with the corner of each patch in the
/// padded signal.
pub fn init_dictionary_with_positions(
    y: &DenseTensor,
    cfg: &KcscConfig,
) -> Result<(Dictionary, Vec<Vec<usize>>)> {
    cfg.validate(y.shape())?;
    let padded = cfg.init_padding.apply(y, &cfg.atom_shape)?;
    let mut rng = stream_rng(cfg.seed, DICT_STREAM);
    let mut atoms = Vec::with_capacity(cfg.atoms);
    let mut positions = Vec::with_capacity(cfg.atoms);
    for _ in 0..cfg.atoms {
        let mut draw = 0;
        let (start, patch) = loop {
            let start: Vec<usize> = padded
                .shape()
                .iter()
                .zip(&cfg.atom_shape)
                .map(|(n, w)| rng.random_range(0..=n - w))
                .collect();
            let patch = padded.window(&start, &cfg.atom_shape)?;
            draw += 1;
            if patch.nnz() > 0 || draw == MAX_PATCH_DRAWS {
                break (start, patch);
            }
        };
        atoms.push(project_unit_ball(&patch));
        positions.push(start);
    }
    Ok((Dictionary::new(atoms)?, positions))
}

/// Initial activations: mode-0 factors zero, other modes random unit-norm
/// columns so that the first Z-block sees nonzero filters.
fn init_activations(cfg: &KcscConfig, m: &[usize]) -> Result<ActivationSet> {
    let mut rng = stream_rng(cfg.seed, ACTS_STREAM);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidArgument(format!("{e}")))?;
    let mut entries = Vec::with_capacity(cfg.atoms);
    for _ in 0..cfg.atoms {
        let mut factors = vec![FactorMatrix::zeros(m[0], cfg.rank)?];
        for &ml in &m[1..] {
            let mut f = FactorMatrix::zeros(ml, cfg.rank)?;
            for r in 0..cfg.rank {
                let col = f.column_mut(r);
                col.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
                let n = math::norm(col);
                if n > 0.0 {
                    col.iter_mut().for_each(|v| *v /= n);
                }
            }
            factors.push(f);
        }
        entries.push(KruskalTensor::new(factors)?);
    }
    ActivationSet::new(entries)
}

/// `t` contracted with `u[l]` along every mode except `mode`.
fn contract_except(t: &[f64], shape: &[usize], u: &[Vec<f64>], mode: usize) -> Vec<f64> {
    let mut out = vec![0.0; shape[mode]];
    let mut flat = 0;
    crate::tensor::for_each_index(shape, |idx| {
        let v = t[flat];
        flat += 1;
        if v == 0.0 {
            return;
        }
        let w: f64 = (0..shape.len())
            .filter(|&l| l != mode)
            .map(|l| u[l][idx[l]])
            .product();
        out[idx[mode]] += v * w;
    });
    out
}

const RANK_ONE_SWEEPS: usize = 30;

/// Greedy rank-`rank` CP approximation of a dense tensor: each term is
/// seeded with the fibers through the largest residual entry, refined by
/// alternating power sweeps, then deflated. Returns `(λ, unit columns)`.
fn greedy_cp(t: &[f64], shape: &[usize], rank: usize) -> Vec<(f64, Vec<Vec<f64>>)> {
    let strides = crate::tensor::strides(shape);
    let mut res = t.to_vec();
    let mut terms = Vec::new();
    for _ in 0..rank {
        let (flat, peak) = res.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| {
            if math::abs(*v) > acc.1 {
                (i, math::abs(*v))
            } else {
                acc
            }
        });
        if peak == 0.0 {
            break;
        }
        let idx: Vec<usize> = strides
            .iter()
            .zip(shape)
            .map(|(s, n)| (flat / s) % n)
            .collect();
        let mut u: Vec<Vec<f64>> = shape.iter().map(|n| vec![0.0; *n]).collect();
        for (l, col) in u.iter_mut().enumerate() {
            col[idx[l]] = 1.0;
        }
        let mut lambda = 0.0;
        for _ in 0..RANK_ONE_SWEEPS {
            for l in 0..shape.len() {
                let v = contract_except(&res, shape, &u, l);
                let n = math::norm(&v);
                if n == 0.0 {
                    break;
                }
                lambda = n;
                u[l] = v.iter().map(|x| x / n).collect();
            }
        }
        if lambda == 0.0 {
            break;
        }
        // sign of λ is carried by the last refined column
        let mut flat = 0;
        crate::tensor::for_each_index(shape, |ix| {
            let w: f64 = ix.iter().enumerate().map(|(l, i)| u[l][*i]).product();
            res[flat] -= lambda * w;
            flat += 1;
        });
        terms.push((lambda, u));
    }
    terms
}

fn dense_cp_activations(
    y: &DenseTensor,
    dict: &Dictionary,
    cfg: &KcscConfig,
    m: &[usize],
) -> Result<ActivationSet> {
    let mut acts = init_activations(cfg, m)?;
    let amax = dense_alpha_max(y, dict)?;
    if amax == 0.0 {
        return Ok(acts);
    }
    let act_len: usize = m.iter().product();
    let lasso = DenseLasso {
        y,
        dict,
        act_shape: m.to_vec(),
        act_len,
        alpha: DENSE_INIT_ALPHA * amax,
        beta: 0.0,
    };
    let label = || "activation initialization".into();
    let out = fista(&lasso, vec![0.0; lasso.dim()], INIT_BUDGET, &label)?;
    for (k, dense) in out.x.chunks(act_len).enumerate() {
        let kt = acts.entry_mut(k);
        for (r, (lambda, u)) in greedy_cp(dense, m, cfg.rank).into_iter().enumerate() {
            for (l, col) in u.iter().enumerate() {
                let dst = kt.factor_mut(l).column_mut(r);
                let scale = if l == 0 { lambda } else { 1.0 };
                dst.iter_mut().zip(col).for_each(|(d, c)| *d = scale * c);
            }
        }
    }
    Ok(acts)
}

fn zero_dead_terms(kt: &mut KruskalTensor) -> Vec<usize> {
    let p = kt.order();
    let mut live = Vec::new();
    for r in 0..kt.rank() {
        let dead = (0..p).any(|l| kt.factor(l).column(r).iter().all(|v| *v == 0.0));
        if dead {
            for l in 0..p {
                kt.factor_mut(l)
                    .column_mut(r)
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
            }
        } else {
            live.push(r);
        }
    }
    live
}

fn scale_term(kt: &mut KruskalTensor, r: usize, scales: &[f64]) {
    for (l, s) in scales.iter().enumerate() {
        if *s != 1.0 {
            kt.factor_mut(l)
                .column_mut(r)
                .iter_mut()
                .for_each(|v| *v *= s);
        }
    }
}

fn unit_norm_scales(kt: &KruskalTensor, r: usize) -> Vec<f64> {
    let p = kt.order();
    let mut scales = vec![1.0; p];
    let mut folded = 1.0;
    for (l, s) in scales.iter_mut().enumerate().skip(1) {
        let n = math::norm(kt.factor(l).column(r));
        *s = 1.0 / n;
        folded *= n;
    }
    scales[0] = folded;
    scales
}

/// Normalize factor columns of modes `1..p` to unit norm and fold the
/// magnitudes into mode 0. A rank-one term with a zero column has all of
/// its columns zeroed. The reconstruction is unchanged.
pub fn rebalance(acts: &ActivationSet) -> ActivationSet {
    let mut out = acts.clone();
    for k in 0..out.len() {
        let kt = out.entry_mut(k);
        for r in zero_dead_terms(kt) {
            let s = unit_norm_scales(kt, r);
            scale_term(kt, r, &s);
        }
    }
    out
}

/// Penalty of one rank-one term under per-mode scales.
fn term_penalty(a: &[f64], b: &[f64], s: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(s)
        .map(|((a, b), s)| a * s + b * s * s)
        .sum()
}

/// Scales with product one minimizing `Σ_l a_l s_l + b_l s_l²`, all
/// coefficients positive. Stationarity gives `s_l (a_l + 2 b_l s_l) = μ`,
/// and `μ` is found by bisection on `Σ_l ln s_l(μ) = 0`.
fn balanced_scales(a: &[f64], b: &[f64]) -> Vec<f64> {
    let s_of = |mu: f64, a: f64, b: f64| {
        if b == 0.0 {
            mu / a
        } else {
            // positive root of 2b s² + a s − μ, in a cancellation-free form
            2.0 * mu / (a + math::sqrt(a * a + 8.0 * b * mu))
        }
    };
    if b.iter().all(|b| *b == 0.0) {
        let p = a.len() as f64;
        let log_mu = a.iter().map(|a| libm::log(*a)).sum::<f64>() / p;
        let mu = libm::exp(log_mu);
        return a.iter().map(|a| mu / a).collect();
    }
    let g = |log_mu: f64| -> f64 {
        let mu = libm::exp(log_mu);
        a.iter()
            .zip(b)
            .map(|(a, b)| libm::log(s_of(mu, *a, *b)))
            .sum()
    };
    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    while g(lo) > 0.0 {
        lo *= 2.0;
    }
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = libm::exp(0.5 * (lo + hi));
    a.iter().zip(b).map(|(a, b)| s_of(mu, *a, *b)).collect()
}

/// Rebalance under `rule`, using the penalty weights for [`RebalanceRule::Balanced`].
pub fn rebalance_with(acts: &ActivationSet, pen: &Penalty, rule: RebalanceRule) -> ActivationSet {
    if rule == RebalanceRule::UnitNorm {
        return rebalance(acts);
    }
    let mut out = acts.clone();
    let p = out.order();
    for k in 0..out.len() {
        let kt = out.entry_mut(k);
        for r in zero_dead_terms(kt) {
            let a: Vec<f64> = (0..p)
                .map(|l| pen.alpha[l] * math::l1(kt.factor(l).column(r)))
                .collect();
            let b: Vec<f64> = (0..p)
                .map(|l| pen.beta[l] * math::norm_sq(kt.factor(l).column(r)))
                .collect();
            let ones = vec![1.0; p];
            let current = term_penalty(&a, &b, &ones);
            let unit = unit_norm_scales(kt, r);
            let scales = if a.iter().zip(&b).all(|(a, b)| *a > 0.0 || *b > 0.0) {
                balanced_scales(&a, &b)
            } else {
                unit
            };
            let proposed = term_penalty(&a, &b, &scales);
            if proposed.is_finite() && proposed <= current {
                scale_term(kt, r, &scales);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn record(
    trace: &mut FitTrace,
    outer_loop: usize,
    block: BlockKind,
    objective: ObjectiveBreakdown,
    nnz_per_mode: Vec<usize>,
    nnz: usize,
    seconds: f64,
    iterations: usize,
) -> Result<()> {
    if !objective.total.is_finite() {
        return Err(Error::Numerical(format!(
            "outer loop {outer_loop}, {block} block: objective is not finite"
        )));
    }
    trace.blocks.push(BlockRecord {
        outer_loop,
        block,
        objective,
        residual_norm: math::sqrt(objective.residual),
        nnz_per_mode,
        nnz,
        seconds,
        iterations,
    });
    Ok(())
}

/// Outer-loop bookkeeping shared by both fits; returns whether to stop.
fn close_loop(trace: &mut FitTrace, outer_loop: usize, prev: f64, seconds: f64, tol: f64) -> bool {
    let last = trace.last();
    let nnz = trace.blocks.last().map_or(0, |b| b.nnz);
    let change = math::abs(prev - last.total) / math::abs(prev).max(f64::MIN_POSITIVE);
    trace.loops.push(LoopRecord {
        outer_loop,
        objective: last.total,
        relative_change: change,
        nnz,
        seconds,
    });
    change <= tol
}

/// Starting dictionary, activations and patch positions of [`fit`].
fn initial_state(
    y: &DenseTensor,
    cfg: &KcscConfig,
) -> Result<(Dictionary, ActivationSet, Vec<Vec<usize>>)> {
    let m = cfg.act_shape(y.shape());
    let (dict, positions) = match &cfg.initial_dictionary {
        Some(d) => (d.clone(), Vec::new()),
        None => init_dictionary_with_positions(y, cfg)?,
    };
    let acts = match (&cfg.initial_activations, cfg.activation_init) {
        (Some(a), _) => a.clone(),
        (None, ActivationInit::Random) => init_activations(cfg, &m)?,
        (None, ActivationInit::DenseCp) => dense_cp_activations(y, &dict, cfg, &m)?,
    };
    Ok((dict, acts, positions))
}

/// Per-mode `alpha_max` of the Z-block subproblems at the state [`fit`]
/// starts from. The penalty weights of `cfg` play no part.
pub fn initial_alpha_max(y: &DenseTensor, cfg: &KcscConfig) -> Result<Vec<f64>> {
    cfg.validate(y.shape())?;
    let (dict, acts, _) = initial_state(y, cfg)?;
    let pen = Penalty::zeros(y.order());
    (0..y.order())
        .map(|l| build_mode_problem(y, &dict, &acts, l, &pen).map(|p| alpha_max(&p)))
        .collect()
}

/// [`fit_with_clock`] without timing.
pub fn fit(y: &DenseTensor, cfg: &KcscConfig) -> Result<FitResult> {
    fit_with_clock(y, cfg, &NoClock)
}

/// Alternating minimization with Kruskal activations of rank `cfg.rank`.
pub fn fit_with_clock(y: &DenseTensor, cfg: &KcscConfig, clock: &dyn Clock) -> Result<FitResult> {
    cfg.validate(y.shape())?;
    if !y.is_finite() {
        return Err(Error::Numerical("signal contains non-finite values".into()));
    }
    let p = y.order();
    let pen = cfg.penalty()?;
    let init_start = clock.now();
    let (mut dict, mut acts, positions) = initial_state(y, cfg)?;
    let mut trace = FitTrace::new(objective(y, &dict, &acts, &pen)?, positions);
    trace.initial_nnz = acts.total_nnz();
    trace.initial_nnz_per_mode = acts.nnz_per_mode();
    trace.init_seconds = clock.now() - init_start;

    let mut prev = trace.initial.total;
    for t in 1..=cfg.outer_loops {
        let loop_start = clock.now();
        for mode in 0..p {
            let start = clock.now();
            let ctx = || format!("outer loop {t}, mode {}", mode + 1);
            let problem = build_mode_problem(y, &dict, &acts, mode, &pen)?;
            let warm = problem.current_columns(&acts);
            let sol = solve_mode(&problem, Some(&warm), cfg.mode_budget)
                .map_err(|e| with_context(e, &ctx()))?;
            problem.store_columns(&mut acts, &sol.z)?;
            acts = rebalance_with(&acts, &pen, cfg.rebalance);
            let obj = objective(y, &dict, &acts, &pen)?;
            record(
                &mut trace,
                t,
                BlockKind::Mode(mode),
                obj,
                acts.nnz_per_mode(),
                acts.total_nnz(),
                clock.now() - start,
                sol.iterations,
            )?;
        }
        if cfg.update_dictionary {
            let start = clock.now();
            let (d, iterations) = update_dictionary_with(y, &dict, acts.entries(), cfg.dict_budget)
                .map_err(|e| with_context(e, &format!("outer loop {t}, dictionary")))?;
            dict = d;
            let obj = objective(y, &dict, &acts, &pen)?;
            record(
                &mut trace,
                t,
                BlockKind::Dictionary,
                obj,
                acts.nnz_per_mode(),
                acts.total_nnz(),
                clock.now() - start,
                iterations,
            )?;
        }
        let done = close_loop(&mut trace, t, prev, clock.now() - loop_start, cfg.outer_tol);
        prev = trace.last().total;
        if done {
            trace.converged = true;
            break;
        }
    }
    Ok(FitResult {
        dictionary: dict,
        activations: acts,
        trace,
    })
}

/// `‖Y − Σ_k D_k ⋆ Z_k‖² + α‖Z‖_1 + β‖Z‖²` for dense activations.
pub fn dense_objective(
    y: &DenseTensor,
    dict: &Dictionary,
    acts: &[DenseTensor],
    alpha: f64,
    beta: f64,
) -> Result<ObjectiveBreakdown> {
    let residual = y.sub(&reconstruct_dense(dict, acts)?)?.norm_sq();
    let l1: f64 = acts.iter().map(|z| z.l1_norm()).sum();
    let sq: f64 = acts.iter().map(|z| z.norm_sq()).sum();
    Ok(ObjectiveBreakdown {
        total: residual + alpha * l1 + beta * sq,
        residual,
        l1: alpha * l1,
        ridge: beta * sq,
    })
}

/// Smallest L1 weight at which all-zero dense activations are optimal for
/// the given dictionary: `2 · max_k ‖correlate(Y, D_k)‖_∞`.
pub fn dense_alpha_max(y: &DenseTensor, dict: &Dictionary) -> Result<f64> {
    let mut amax = 0.0f64;
    for atom in dict.atoms() {
        let c = correlate_auto(y, atom, ConvPolicy::default())?;
        amax = c
            .as_slice()
            .iter()
            .fold(amax, |acc, v| acc.max(math::abs(*v)));
    }
    Ok(2.0 * amax)
}

struct DenseLasso<'a> {
    y: &'a DenseTensor,
    dict: &'a Dictionary,
    act_shape: Vec<usize>,
    act_len: usize,
    alpha: f64,
    beta: f64,
}

impl DenseLasso<'_> {
    fn split(&self, x: &[f64]) -> Result<Vec<DenseTensor>> {
        x.chunks(self.act_len)
            .map(|c| DenseTensor::new(self.act_shape.clone(), c.to_vec()))
            .collect()
    }

    fn adjoint(&self, r: &DenseTensor, out: &mut [f64]) -> Result<()> {
        for (atom, dst) in self.dict.atoms().iter().zip(out.chunks_mut(self.act_len)) {
            dst.copy_from_slice(correlate_auto(r, atom, ConvPolicy::default())?.as_slice());
        }
        Ok(())
    }
}

impl ProxProblem for DenseLasso<'_> {
    fn dim(&self) -> usize {
        self.dict.len() * self.act_len
    }

    fn image(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(reconstruct_dense(self.dict, &self.split(x)?)?.into_vec())
    }

    fn smooth(&self, x: &[f64], ax: &[f64]) -> f64 {
        let res: f64 = self
            .y
            .as_slice()
            .iter()
            .zip(ax)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        res + self.beta * math::norm_sq(x)
    }

    fn gradient(&self, x: &[f64], ax: &[f64], out: &mut [f64]) -> Result<()> {
        let r: Vec<f64> = self
            .y
            .as_slice()
            .iter()
            .zip(ax)
            .map(|(a, b)| a - b)
            .collect();
        self.adjoint(&DenseTensor::new(self.y.shape().to_vec(), r)?, out)?;
        for (g, xi) in out.iter_mut().zip(x) {
            *g = -2.0 * *g + 2.0 * self.beta * xi;
        }
        Ok(())
    }

    fn prox(&self, v: &mut [f64], step: f64) {
        let t = self.alpha * step;
        for x in v.iter_mut() {
            *x = if *x > t {
                *x - t
            } else if *x < -t {
                *x + t
            } else {
                0.0
            };
        }
    }

    fn nonsmooth(&self, x: &[f64]) -> f64 {
        self.alpha * math::l1(x)
    }

    fn lipschitz(&self) -> Result<f64> {
        let lambda = power_iteration(self.dim(), |v, out| {
            let fwd = reconstruct_dense(self.dict, &self.split(v)?)?;
            self.adjoint(&fwd, out)
        })?;
        if lambda == 0.0 && self.beta == 0.0 {
            return Ok(0.0);
        }
        Ok(2.0 * (lambda + self.beta) * LIPSCHITZ_SAFETY)
    }

    fn magnitude(&self) -> f64 {
        self.y.norm_sq()
    }
}

/// [`fit_baseline_with_clock`] without timing.
pub fn fit_baseline(y: &DenseTensor, cfg: &KcscConfig) -> Result<BaselineFit> {
    fit_baseline_with_clock(y, cfg, &NoClock)
}

/// The same alternating scheme with dense, unconstrained activations and a
/// single L1 weight (`cfg.baseline_alpha`, else `alpha[0]`) and ridge
/// weight (`beta[0]`), solved by proximal gradient on the full tensor.
pub fn fit_baseline_with_clock(
    y: &DenseTensor,
    cfg: &KcscConfig,
    clock: &dyn Clock,
) -> Result<BaselineFit> {
    cfg.validate(y.shape())?;
    if !y.is_finite() {
        return Err(Error::Numerical("signal contains non-finite values".into()));
    }
    let m = cfg.act_shape(y.shape());
    let act_len: usize = m.iter().product();
    let alpha = cfg.baseline_alpha.unwrap_or(cfg.alpha[0]);
    let beta = cfg.beta[0];
    let init_start = clock.now();
    let (mut dict, positions) = match &cfg.initial_dictionary {
        Some(d) => (d.clone(), Vec::new()),
        None => init_dictionary_with_positions(y, cfg)?,
    };
    let mut acts: Vec<DenseTensor> = (0..cfg.atoms)
        .map(|_| DenseTensor::zeros(&m))
        .collect::<Result<_>>()?;
    check_pairing(y.shape(), &dict, &m, acts.len())?;
    let mut trace = FitTrace::new(dense_objective(y, &dict, &acts, alpha, beta)?, positions);
    trace.init_seconds = clock.now() - init_start;

    let mut prev = trace.initial.total;
    for t in 1..=cfg.outer_loops {
        let loop_start = clock.now();
        let start = clock.now();
        let lasso = DenseLasso {
            y,
            dict: &dict,
            act_shape: m.clone(),
            act_len,
            alpha,
            beta,
        };
        let x0: Vec<f64> = acts
            .iter()
            .flat_map(|z| z.as_slice().iter().copied())
            .collect();
        let iterations = if alpha >= dense_alpha_max(y, &dict)? {
            acts.iter_mut().for_each(|z| z.fill(0.0));
            0
        } else {
            let label = || format!("outer loop {t}, dense activation solver");
            let out = fista(&lasso, x0, cfg.mode_budget, &label)?;
            acts = lasso.split(&out.x)?;
            out.iterations
        };
        let nnz: usize = acts.iter().map(|z| z.nnz()).sum();
        let obj = dense_objective(y, &dict, &acts, alpha, beta)?;
        record(
            &mut trace,
            t,
            BlockKind::Dense,
            obj,
            Vec::new(),
            nnz,
            clock.now() - start,
            iterations,
        )?;
        if cfg.update_dictionary {
            let start = clock.now();
            let (d, iterations) = update_dictionary_with(y, &dict, &acts, cfg.dict_budget)
                .map_err(|e| with_context(e, &format!("outer loop {t}, dictionary")))?;
            dict = d;
            let obj = dense_objective(y, &dict, &acts, alpha, beta)?;
            record(
                &mut trace,
                t,
                BlockKind::Dictionary,
                obj,
                Vec::new(),
                nnz,
                clock.now() - start,
                iterations,
            )?;
        }
        let done = close_loop(&mut trace, t, prev, clock.now() - loop_start, cfg.outer_tol);
        prev = trace.last().total;
        if done {
            trace.converged = true;
            break;
        }
    }
    Ok(BaselineFit {
        dictionary: dict,
        activations: acts,
        trace,
    })
}

/// Shapes and sparsity of a synthetic problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub signal_shape: Vec<usize>,
    pub atom_shape: Vec<usize>,
    pub atoms: usize,
    pub rank: usize,
    /// Probability that a factor entry is nonzero.
    pub density: f64,
    pub noise_sigma: f64,
}

impl SyntheticSpec {
    pub fn new(
        signal_shape: Vec<usize>,
        atom_shape: Vec<usize>,
        atoms: usize,
        rank: usize,
    ) -> Self {
        Self {
            signal_shape,
            atom_shape,
            atoms,
            rank,
            density: 0.1,
            noise_sigma: 0.0,
        }
    }

    /// K = 10 atoms of 2×4×8, Y of 16×32×64, rank 4.
    pub fn reference() -> Self {
        Self::new(vec![16, 32, 64], vec![2, 4, 8], 10, 4)
    }

    /// Activation extents `m = n − w + 1`.
    pub fn act_shape(&self) -> Result<Vec<usize>> {
        if self.signal_shape.len() != self.atom_shape.len() || self.signal_shape.is_empty() {
            return Err(Error::Shape(format!(
                "signal shape {:?} and atom shape {:?} must have the same nonzero order",
                self.signal_shape, self.atom_shape
            )));
        }
        self.signal_shape
            .iter()
            .zip(&self.atom_shape)
            .enumerate()
            .map(|(l, (n, w))| {
                if *w == 0 || w > n {
                    Err(Error::Shape(format!(
                        "mode {}: atom extent {w} must be in 1..={n}",
                        l + 1
                    )))
                } else {
                    Ok(n - w + 1)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub y: DenseTensor,
    pub dictionary: Dictionary,
    pub activations: ActivationSet,
}

/// Random instance of the model: Gaussian atoms with a per-atom standard
/// deviation drawn in `[1, 10]` and projected onto the unit ball, and sparse
/// Kruskal activations of rank `spec.rank` with at least one nonzero per
/// factor column.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticTruth> {
    let m = spec.act_shape()?;
    if spec.atoms == 0 || spec.rank == 0 {
        return Err(Error::InvalidArgument(format!(
            "atom count and rank must be at least 1, got K={} R={}",
            spec.atoms, spec.rank
        )));
    }
    if !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density must be in (0, 1], got {}",
            spec.density
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidArgument(format!("{e}")))?;
    let mut atoms = Vec::with_capacity(spec.atoms);
    for _ in 0..spec.atoms {
        let std = rng.random_range(1.0..=10.0);
        let atom = DenseTensor::from_fn(&spec.atom_shape, |_| std * normal.sample(&mut rng))?;
        atoms.push(project_unit_ball(&atom));
    }
    let mut entries = Vec::with_capacity(spec.atoms);
    for _ in 0..spec.atoms {
        let mut factors = Vec::with_capacity(m.len());
        for &ml in &m {
            let mut f = FactorMatrix::zeros(ml, spec.rank)?;
            for r in 0..spec.rank {
                let col = f.column_mut(r);
                for v in col.iter_mut() {
                    if rng.random::<f64>() < spec.density {
                        *v = normal.sample(&mut rng);
                    }
                }
                if col.iter().all(|v| *v == 0.0) {
                    let i = rng.random_range(0..ml);
                    col[i] = normal.sample(&mut rng);
                }
            }
            factors.push(f);
        }
        entries.push(KruskalTensor::new(factors)?);
    }
    let dictionary = Dictionary::new(atoms)?;
    let activations = ActivationSet::new(entries)?;
    let y = synthesize(
        &dictionary,
        &activations,
        spec.noise_sigma,
        seed ^ NOISE_OFFSET,
    )?;
    Ok(SyntheticTruth {
        y,
        dictionary,
        activations,
    })
}
