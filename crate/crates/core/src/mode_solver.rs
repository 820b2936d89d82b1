//! Activation update for one mode.
//!
//! With the dictionary and every other mode frozen, the residual term of the
//! objective equals a multichannel 1-D convolutional sparse coding problem
//!
//! ```text
//! Σ_c ‖Ỹ[:, c] − Σ_s D̃[s, :, c] ⋆ z_s‖² + α Σ_s ‖z_s‖_1 + β Σ_s ‖z_s‖²
//! ```
//!
//! where `Ỹ` is the mode unfolding of the signal (`C = Π_{i≠l} n_i` channels)
//! and the `S = K·R` filters `D̃[s]` are the atoms convolved along all other
//! modes with the frozen factor columns of rank-one term `s = (k, r)`.
//!
//! The solver works on the Gram form: `D̃ᵀD̃` is a banded block-Toeplitz
//! operator with `2w − 1` taps per source pair, so after a one-off
//! precomputation each iteration is independent of `C`. The same quantities
//! give a closed-form duality gap, which the solver uses as its stopping
//! test.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::conv::conv_along_mode;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{check_pairing, objective, ActivationSet, Dictionary, Penalty};
use crate::prox::{fista, power_iteration, ProxProblem, LIPSCHITZ_SAFETY};
use crate::tensor::{unfold, DenseTensor, FactorMatrix};

/// Iteration cap and relative tolerance for an iterative solve. The mode
/// solver applies `tol` to its duality gap, the other solvers to the change
/// in objective between iterates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveBudget {
    pub max_iter: usize,
    pub tol: f64,
}

impl SolveBudget {
    pub const fn new(max_iter: usize, tol: f64) -> Self {
        Self { max_iter, tol }
    }
}

impl Default for SolveBudget {
    fn default() -> Self {
        Self::new(500, 1e-8)
    }
}

/// One Z-block subproblem in multichannel form.
#[derive(Debug, Clone)]
pub struct ModeProblem {
    mode: usize,
    rank: usize,
    signal_len: usize,
    act_len: usize,
    filter_len: usize,
    channels: usize,
    sources: usize,
    y_unfolded: DenseTensor,
    /// `[s][j][c]`, contiguous in `c`.
    filters: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

/// Result of [`solve_mode`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSolution {
    /// `S` columns of length `m`, source-major.
    pub z: Vec<f64>,
    pub act_len: usize,
    /// Subproblem objective of `z`.
    pub objective: f64,
    pub iterations: usize,
}

impl ModeSolution {
    pub fn column(&self, s: usize) -> &[f64] {
        &self.z[s * self.act_len..(s + 1) * self.act_len]
    }

    pub fn sources(&self) -> usize {
        self.z.len() / self.act_len
    }

    pub fn nnz(&self) -> usize {
        self.z.iter().filter(|v| **v != 0.0).count()
    }
}

/// Build the mode-`mode` (0-based) subproblem. Source `s = k·R + r` uses
/// the factor columns of every mode except `mode` from activation `k`,
/// rank-one term `r`; channels follow [`unfold`]'s column order.
pub fn build_mode_problem(
    y: &DenseTensor,
    dict: &Dictionary,
    acts: &ActivationSet,
    mode: usize,
    pen: &Penalty,
) -> Result<ModeProblem> {
    let p = y.order();
    if mode >= p {
        return Err(Error::ModeOutOfRange { mode, order: p });
    }
    let m = acts.shape();
    check_pairing(y.shape(), dict, &m, acts.len())?;
    if pen.order() != p {
        return Err(Error::Shape(format!(
            "penalty has {} modes, signal has {p}",
            pen.order()
        )));
    }
    let rank = acts.rank();
    let w = dict.atom_shape()[mode];
    let n = y.shape()[mode];
    let channels = y.len() / n;
    let sources = acts.len() * rank;
    let mut filters = vec![0.0; sources * w * channels];
    for (k, (atom, act)) in dict.atoms().iter().zip(acts.entries()).enumerate() {
        for r in 0..rank {
            let s = k * rank + r;
            let others_zero = (0..p)
                .filter(|&l| l != mode)
                .any(|l| act.factor(l).column(r).iter().all(|v| *v == 0.0));
            if others_zero {
                continue;
            }
            let mut t = atom.clone();
            for l in (0..p).filter(|&l| l != mode) {
                t = conv_along_mode(&t, l, act.factor(l).column(r));
            }
            // t has extent w along `mode` and n_i elsewhere: unfolding it
            // yields exactly the w × C block of source s.
            let block = unfold(&t, mode)?;
            filters[s * w * channels..(s + 1) * w * channels].copy_from_slice(block.as_slice());
        }
    }
    Ok(ModeProblem {
        mode,
        rank,
        signal_len: n,
        act_len: m[mode],
        filter_len: w,
        channels,
        sources,
        y_unfolded: unfold(y, mode)?,
        filters,
        alpha: pen.alpha[mode],
        beta: pen.beta[mode],
    })
}

impl ModeProblem {
    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn act_len(&self) -> usize {
        self.act_len
    }

    pub fn filter_len(&self) -> usize {
        self.filter_len
    }

    pub fn y_unfolded(&self) -> &DenseTensor {
        &self.y_unfolded
    }

    /// `D̃[s, j, c]`.
    pub fn filter(&self, s: usize, j: usize, c: usize) -> f64 {
        self.filters[(s * self.filter_len + j) * self.channels + c]
    }

    /// `D̃[s, j, :]` across all channels.
    pub fn filter_row(&self, s: usize, j: usize) -> &[f64] {
        let start = (s * self.filter_len + j) * self.channels;
        &self.filters[start..start + self.channels]
    }

    /// Build a problem directly from its parts; `filters` is `[s][j][c]`.
    pub fn from_parts(
        y_unfolded: DenseTensor,
        filters: Vec<f64>,
        sources: usize,
        filter_len: usize,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        if y_unfolded.order() != 2 {
            return Err(Error::Shape("unfolded signal must be a matrix".into()));
        }
        let (n, channels) = (y_unfolded.shape()[0], y_unfolded.shape()[1]);
        if sources == 0 || filter_len == 0 || filter_len > n {
            return Err(Error::Shape(format!(
                "{sources} sources with filters of length {filter_len} for signal length {n}"
            )));
        }
        if filters.len() != sources * filter_len * channels {
            return Err(Error::Shape(format!(
                "filters need {} values, got {}",
                sources * filter_len * channels,
                filters.len()
            )));
        }
        if !(alpha >= 0.0 && beta >= 0.0) {
            return Err(Error::InvalidArgument(
                "alpha and beta must be nonnegative".into(),
            ));
        }
        Ok(Self {
            mode: 0,
            rank: 1,
            signal_len: n,
            act_len: n - filter_len + 1,
            filter_len,
            channels,
            sources,
            y_unfolded,
            filters,
            alpha,
            beta,
        })
    }

    /// The current mode-`mode` factor columns of `acts`, in source order.
    pub fn current_columns(&self, acts: &ActivationSet) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.sources * self.act_len);
        for e in acts.entries() {
            let f = e.factor(self.mode);
            for r in 0..self.rank {
                z.extend_from_slice(f.column(r));
            }
        }
        z
    }

    /// Write source-major columns back as the mode-`mode` factors of `acts`.
    pub fn store_columns(&self, acts: &mut ActivationSet, z: &[f64]) -> Result<()> {
        if z.len() != self.sources * self.act_len {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                self.sources * self.act_len,
                z.len()
            )));
        }
        let chunk = self.rank * self.act_len;
        for (k, cols) in z.chunks(chunk).enumerate() {
            let f = FactorMatrix::new(self.act_len, self.rank, cols.to_vec())?;
            acts.entry_mut(k).set_factor(self.mode, f)?;
        }
        Ok(())
    }

    /// `Σ_s D̃[s, :, c] ⋆ z_s` for every channel, as an `n × C` matrix.
    pub fn forward(&self, z: &[f64]) -> Vec<f64> {
        let (m, w, c) = (self.act_len, self.filter_len, self.channels);
        let mut out = vec![0.0; self.signal_len * c];
        for s in 0..self.sources {
            let zs = &z[s * m..(s + 1) * m];
            for (t, &zv) in zs.iter().enumerate() {
                if zv == 0.0 {
                    continue;
                }
                for j in 0..w {
                    let row = self.filter_row(s, j);
                    let dst = &mut out[(t + j) * c..(t + j + 1) * c];
                    for (d, f) in dst.iter_mut().zip(row) {
                        *d += zv * f;
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`forward`](Self::forward):
    /// `out_s[t] = Σ_c Σ_j D̃[s, j, c] · r[t + j, c]`.
    pub fn adjoint(&self, r: &[f64]) -> Vec<f64> {
        let (m, w, c) = (self.act_len, self.filter_len, self.channels);
        let mut out = vec![0.0; self.sources * m];
        for s in 0..self.sources {
            for j in 0..w {
                let row = self.filter_row(s, j);
                if row.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for t in 0..m {
                    out[s * m + t] += math::dot(row, &r[(t + j) * c..(t + j + 1) * c]);
                }
            }
        }
        out
    }

    /// Subproblem objective evaluated through the explicit multichannel
    /// convolution.
    pub fn objective(&self, z: &[f64]) -> f64 {
        let pred = self.forward(z);
        let res: f64 = self
            .y_unfolded
            .as_slice()
            .iter()
            .zip(&pred)
            .map(|(y, p)| (y - p) * (y - p))
            .sum();
        res + self.alpha * math::l1(z) + self.beta * math::norm_sq(z)
    }

    /// Residual part of [`objective`](Self::objective).
    pub fn residual(&self, z: &[f64]) -> f64 {
        let pred = self.forward(z);
        self.y_unfolded
            .as_slice()
            .iter()
            .zip(&pred)
            .map(|(y, p)| (y - p) * (y - p))
            .sum()
    }

    fn gram(&self) -> Gram {
        let (w, sc) = (self.filter_len, self.sources);
        let taps = 2 * w - 1;
        let mut h = vec![0.0; sc * sc * taps];
        let active: Vec<bool> = (0..sc)
            .map(|s| (0..w).any(|j| self.filter_row(s, j).iter().any(|v| *v != 0.0)))
            .collect();
        for s in 0..sc {
            if !active[s] {
                continue;
            }
            for s2 in s..sc {
                if !active[s2] {
                    continue;
                }
                for j in 0..w {
                    let a = self.filter_row(s, j);
                    for j2 in 0..w {
                        let v = math::dot(a, self.filter_row(s2, j2));
                        // delta = j - j2, stored at delta + w - 1
                        let d = j + w - 1 - j2;
                        h[(s * sc + s2) * taps + d] += v;
                        if s2 != s {
                            h[(s2 * sc + s) * taps + (taps - 1 - d)] += v;
                        }
                    }
                }
            }
        }
        Gram {
            sources: sc,
            act_len: self.act_len,
            filter_len: w,
            h,
            active,
        }
    }
}

/// `D̃ᵀD̃` in banded form.
struct Gram {
    sources: usize,
    act_len: usize,
    filter_len: usize,
    /// `[s][s'][delta + w - 1]`
    h: Vec<f64>,
    active: Vec<bool>,
}

impl Gram {
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        let (sc, m, w) = (self.sources, self.act_len, self.filter_len);
        let taps = 2 * w - 1;
        out.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..sc {
            if !self.active[s] {
                continue;
            }
            let dst = &mut out[s * m..(s + 1) * m];
            for s2 in 0..sc {
                if !self.active[s2] {
                    continue;
                }
                let src = &z[s2 * m..(s2 + 1) * m];
                let hk = &self.h[(s * sc + s2) * taps..(s * sc + s2 + 1) * taps];
                for (di, &hv) in hk.iter().enumerate() {
                    if hv == 0.0 {
                        continue;
                    }
                    // out[t] += h[delta] * z[t + delta]
                    let delta = di as isize - (w as isize - 1);
                    let t0 = if delta < 0 { (-delta) as usize } else { 0 };
                    let t1 = if delta > 0 {
                        m.saturating_sub(delta as usize)
                    } else {
                        m
                    };
                    for t in t0..t1 {
                        dst[t] += hv * src[(t as isize + delta) as usize];
                    }
                }
            }
        }
    }
}

/// `sign(v) · max(|v| − t, 0)`; `t` must be nonnegative.
pub fn soft_threshold(v: f64, t: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "soft-threshold level must be nonnegative, got {t}"
        )));
    }
    Ok(shrink(v, t))
}

#[inline]
fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Smallest L1 weight at which zero solves the subproblem:
/// `2 · max_s ‖Σ_c correlate(D̃[s, :, c], Ỹ[:, c])‖_∞`.
pub fn alpha_max(problem: &ModeProblem) -> f64 {
    let b = problem.adjoint(problem.y_unfolded.as_slice());
    2.0 * b.iter().fold(0.0f64, |acc, v| acc.max(math::abs(*v)))
}

struct ModeQuadratic {
    gram: Gram,
    b: Vec<f64>,
    y_sq: f64,
    alpha: f64,
    beta: f64,
}

impl ProxProblem for ModeQuadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn image(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut hx = vec![0.0; x.len()];
        self.gram.apply(x, &mut hx);
        Ok(hx)
    }

    // ‖Ỹ‖² − 2⟨b, z⟩ + ⟨z, Hz⟩ + β‖z‖²
    fn smooth(&self, x: &[f64], hx: &[f64]) -> f64 {
        self.y_sq - 2.0 * math::dot(&self.b, x) + math::dot(x, hx) + self.beta * math::norm_sq(x)
    }

    fn gradient(&self, x: &[f64], hx: &[f64], out: &mut [f64]) -> Result<()> {
        for i in 0..out.len() {
            out[i] = 2.0 * (hx[i] - self.b[i]) + 2.0 * self.beta * x[i];
        }
        Ok(())
    }

    fn prox(&self, v: &mut [f64], step: f64) {
        let thr = self.alpha * step;
        v.iter_mut().for_each(|x| *x = shrink(*x, thr));
    }

    fn nonsmooth(&self, x: &[f64]) -> f64 {
        self.alpha * math::l1(x)
    }

    fn lipschitz(&self) -> Result<f64> {
        let lambda = power_iteration(self.b.len(), |v, out| {
            self.gram.apply(v, out);
            Ok(())
        })?;
        if lambda == 0.0 {
            return Ok(0.0);
        }
        Ok(2.0 * (lambda + self.beta) * LIPSCHITZ_SAFETY)
    }

    fn magnitude(&self) -> f64 {
        self.y_sq
    }

    // Dual of the lasso on the design stacked with `√β I`: the scaled
    // residual `θ = 2s r` is feasible once `‖2 Aᵀr − 2βz‖∞ ≤ α`.
    fn gap(&self, x: &[f64], hx: &[f64]) -> Option<f64> {
        let mut corr = 0.0f64;
        for i in 0..x.len() {
            corr = corr.max(math::abs(self.b[i] - hx[i] - self.beta * x[i]));
        }
        let s = if corr > 0.0 {
            (self.alpha / (2.0 * corr)).min(1.0)
        } else {
            1.0
        };
        let primal_smooth = self.smooth(x, hx);
        let dual = 2.0 * s * (self.y_sq - math::dot(&self.b, x)) - s * s * primal_smooth;
        let gap = primal_smooth + self.nonsmooth(x) - dual;
        gap.is_finite().then_some(gap.max(0.0))
    }
}

/// Accelerated proximal gradient (FISTA with backtracking and adaptive
/// restart) on the subproblem. Never returns a point worse than the warm
/// start; returns exact zeros when `α ≥ alpha_max`.
pub fn solve_mode(
    problem: &ModeProblem,
    warm_start: Option<&[f64]>,
    budget: SolveBudget,
) -> Result<ModeSolution> {
    let n = problem.sources * problem.act_len;
    if let Some(ws) = warm_start {
        if ws.len() != n {
            return Err(Error::Shape(format!(
                "warm start has {} values, problem has {n}",
                ws.len()
            )));
        }
    }
    let y_sq = problem.y_unfolded.norm_sq();
    let b = problem.adjoint(problem.y_unfolded.as_slice());
    let amax = 2.0 * b.iter().fold(0.0f64, |acc, v| acc.max(math::abs(*v)));
    if problem.alpha >= amax {
        // zero satisfies the optimality condition, so it is the minimizer
        return Ok(ModeSolution {
            z: vec![0.0; n],
            act_len: problem.act_len,
            objective: y_sq,
            iterations: 0,
        });
    }
    let quad = ModeQuadratic {
        gram: problem.gram(),
        b,
        y_sq,
        alpha: problem.alpha,
        beta: problem.beta,
    };
    let x0 = warm_start.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mode = problem.mode;
    let out = fista(&quad, x0, budget, &|| {
        format!("mode {} activation solver", mode + 1)
    })?;
    Ok(ModeSolution {
        z: out.x,
        act_len: problem.act_len,
        objective: out.objective,
        iterations: out.iterations,
    })
}

/// Both sides of the unfolding identity for the current state:
/// `(‖Y − Σ_k D_k ⋆ [[Z_k]]‖², Σ_c ‖Ỹ[:, c] − Σ_s D̃[s, :, c] ⋆ z_s‖²)`.
pub fn mode_residual_identity_check(
    y: &DenseTensor,
    dict: &Dictionary,
    acts: &ActivationSet,
    mode: usize,
) -> Result<(f64, f64)> {
    let pen = Penalty::zeros(y.order());
    let lhs = objective(y, dict, acts, &pen)?.residual;
    let problem = build_mode_problem(y, dict, acts, mode, &pen)?;
    let z = problem.current_columns(acts);
    Ok((lhs, problem.residual(&z)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem_1ch(filter: &[f64], y: &[f64], alpha: f64, beta: f64) -> ModeProblem {
        let yu = DenseTensor::new(vec![y.len(), 1], y.to_vec()).unwrap();
        ModeProblem::from_parts(yu, filter.to_vec(), 1, filter.len(), alpha, beta).unwrap()
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(5.0, 2.0).unwrap(), 3.0);
        assert_eq!(soft_threshold(-1.0, 2.0).unwrap(), 0.0);
        assert_eq!(soft_threshold(-1.5, 0.0).unwrap(), -1.5);
        assert_eq!(soft_threshold(-4.0, 1.0).unwrap(), -3.0);
        assert!(soft_threshold(1.0, -0.1).is_err());
    }

    #[test]
    fn alpha_max_scalar() {
        let p = problem_1ch(&[1.0], &[3.0], 0.0, 0.0);
        assert_eq!(alpha_max(&p), 6.0);
        let zero = problem_1ch(&[1.0, 0.5], &[0.0; 4], 0.0, 0.0);
        assert_eq!(alpha_max(&zero), 0.0);
    }

    #[test]
    fn alpha_max_boundary() {
        // 1-D lasso on a single coefficient: z = (6 - α)/2 for α < 6
        let above = solve_mode(
            &problem_1ch(&[1.0], &[3.0], 6.0 + 1e-9, 0.0),
            None,
            SolveBudget::default(),
        )
        .unwrap();
        assert!(above.z.iter().all(|v| *v == 0.0));
        let below = solve_mode(
            &problem_1ch(&[1.0], &[3.0], 6.0 - 1e-3, 0.0),
            None,
            SolveBudget::default(),
        )
        .unwrap();
        // the solver stops on objective change, so check the objective gap
        let p = problem_1ch(&[1.0], &[3.0], 6.0 - 1e-3, 0.0);
        assert!(below.z[0] > 0.0);
        assert!(p.objective(&below.z) - p.objective(&[0.0005]) < 1e-8 * 9.0);
    }

    #[test]
    fn identity_deconvolution() {
        let y = [1.5, -2.0, 0.25, 4.0];
        let p = problem_1ch(&[1.0], &y, 0.0, 0.0);
        let sol = solve_mode(&p, None, SolveBudget::default()).unwrap();
        for (a, b) in sol.z.iter().zip(&y) {
            assert!((a - b).abs() < 1e-7 * b.abs());
        }
    }

    #[test]
    fn ridge_shrinks() {
        // minimise (3 - z)^2 + z^2 -> z = 1.5
        let p = problem_1ch(&[1.0], &[3.0], 0.0, 1.0);
        let sol = solve_mode(&p, None, SolveBudget::default()).unwrap();
        assert!((sol.z[0] - 1.5).abs() < 1e-3);
        assert!(p.objective(&sol.z) - 4.5 < 1e-7);
    }

    #[test]
    fn never_worse_than_warm_start() {
        let p = problem_1ch(
            &[0.5, -0.25, 0.1],
            &[1.0, 2.0, -1.0, 0.5, 0.0, 0.3],
            0.2,
            0.0,
        );
        let ws = vec![0.8, 3.0, -1.0, 0.1];
        let f0 = p.objective(&ws);
        let sol = solve_mode(&p, Some(&ws), SolveBudget::new(3, 1e-8)).unwrap();
        assert!(p.objective(&sol.z) <= f0 + 1e-12);
    }

    #[test]
    fn gram_matches_forward_adjoint() {
        let yu = DenseTensor::zeros(&[6, 3]).unwrap();
        let filters: Vec<f64> = (0..2 * 3 * 3)
            .map(|i| ((i * 37) % 11) as f64 / 7.0 - 0.6)
            .collect();
        let p = ModeProblem::from_parts(yu, filters, 2, 3, 0.0, 0.0).unwrap();
        let z: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let direct = p.adjoint(&p.forward(&z));
        let mut viag = vec![0.0; 8];
        p.gram().apply(&z, &mut viag);
        for (a, b) in direct.iter().zip(&viag) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn warm_start_shape_checked() {
        let p = problem_1ch(&[1.0], &[3.0, 1.0], 0.0, 0.0);
        assert!(solve_mode(&p, Some(&[1.0]), SolveBudget::default()).is_err());
    }
}
