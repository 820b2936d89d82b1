//! Shared accelerated proximal-gradient loop.
//!
//! Problems are `min f(x) + g(x)` with `f` a quadratic whose value and
//! gradient depend on `x` only through a linear image `Ax` (the Gram product
//! for the mode solver, the predicted signal for the dictionary and dense
//! solvers). Linearity lets the extrapolated point reuse images instead of
//! recomputing them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::mode_solver::SolveBudget;

pub(crate) trait ProxProblem {
    fn dim(&self) -> usize;
    fn image(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn smooth(&self, x: &[f64], ax: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], ax: &[f64], out: &mut [f64]) -> Result<()>;
    /// Proximal step of `g` with step size `step`, in place.
    fn prox(&self, v: &mut [f64], step: f64);
    fn nonsmooth(&self, x: &[f64]) -> f64;
    /// Lipschitz constant estimate of `∇f`; zero means `f` is constant.
    fn lipschitz(&self) -> Result<f64>;
    /// Scale for the absolute slack in the backtracking test.
    fn magnitude(&self) -> f64;
    /// Upper bound on `F(x) − min F`, when the problem can certify one.
    fn gap(&self, _x: &[f64], _ax: &[f64]) -> Option<f64> {
        None
    }
}

pub(crate) struct ProxOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

pub(crate) const POWER_ITERATIONS: usize = 20;
pub(crate) const LIPSCHITZ_SAFETY: f64 = 1.05;

/// Power iteration for the top eigenvalue of a PSD operator.
pub(crate) fn power_iteration(
    n: usize,
    mut apply: impl FnMut(&[f64], &mut [f64]) -> Result<()>,
) -> Result<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64 / 13.0)
        .collect();
    let mut av = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let nv = math::norm(&v);
        if nv == 0.0 {
            return Ok(0.0);
        }
        v.iter_mut().for_each(|x| *x /= nv);
        apply(&v, &mut av)?;
        lambda = math::norm(&av);
        core::mem::swap(&mut v, &mut av);
    }
    Ok(lambda)
}

/// FISTA with backtracking on the Lipschitz estimate and function-value
/// restart. Returns the best iterate seen, which is never worse than `x0`.
///
/// Stops once the duality gap falls below `tol` relative to the objective
/// when the problem provides one, otherwise once the relative objective
/// change does.
pub(crate) fn fista<P: ProxProblem>(
    p: &P,
    x0: Vec<f64>,
    budget: SolveBudget,
    label: &dyn Fn() -> String,
) -> Result<ProxOutcome> {
    let n = p.dim();
    let mut x = x0;
    let mut ax = p.image(&x)?;
    let mut fx = p.smooth(&x, &ax) + p.nonsmooth(&x);
    if !fx.is_finite() {
        return Err(Error::Numerical(format!(
            "{}: starting point has a non-finite objective",
            label()
        )));
    }
    let mut best = x.clone();
    let mut f_best = fx;
    let mut lip = p.lipschitz()?;
    if lip == 0.0 || budget.max_iter == 0 {
        return Ok(ProxOutcome {
            x,
            objective: fx,
            iterations: 0,
        });
    }
    let slack = 1e-12 * p.magnitude().max(1.0);
    let floor = 1e-12 * p.magnitude();

    let mut yk = x.clone();
    let mut ay = ax.clone();
    let mut t = 1.0;
    let mut grad = vec![0.0; n];
    let mut xn = vec![0.0; n];
    let mut iterations = 0;
    for iter in 1..=budget.max_iter {
        iterations = iter;
        p.gradient(&yk, &ay, &mut grad)?;
        if !math::all_finite(&grad) {
            return Err(Error::Numerical(format!(
                "{}: gradient is not finite at iterate {iter}",
                label()
            )));
        }
        let fy = p.smooth(&yk, &ay);
        let (axn, fxn_smooth) = loop {
            for i in 0..n {
                xn[i] = yk[i] - grad[i] / lip;
            }
            p.prox(&mut xn, 1.0 / lip);
            let axn = p.image(&xn)?;
            let fs = p.smooth(&xn, &axn);
            let mut lin = 0.0;
            let mut quad = 0.0;
            for i in 0..n {
                let d = xn[i] - yk[i];
                lin += grad[i] * d;
                quad += d * d;
            }
            if !fs.is_finite() || fs <= fy + lin + 0.5 * lip * quad + slack {
                break (axn, fs);
            }
            lip *= 2.0;
        };
        let fxn = fxn_smooth + p.nonsmooth(&xn);
        if !fxn.is_finite() {
            return Err(Error::Numerical(format!(
                "{}: iterate {iter} is not finite",
                label()
            )));
        }
        if fxn < f_best {
            f_best = fxn;
            best.copy_from_slice(&xn);
        }
        let t_next = 0.5 * (1.0 + math::sqrt(1.0 + 4.0 * t * t));
        if fxn > fx {
            t = 1.0;
            yk.copy_from_slice(&xn);
            ay.copy_from_slice(&axn);
        } else {
            let mom = (t - 1.0) / t_next;
            for i in 0..n {
                yk[i] = xn[i] + mom * (xn[i] - x[i]);
            }
            for i in 0..ay.len() {
                ay[i] = axn[i] + mom * (axn[i] - ax[i]);
            }
            t = t_next;
        }
        let converged = match p.gap(&xn, &axn) {
            Some(gap) => gap <= (budget.tol * math::abs(fxn)).max(slack),
            None => fxn <= fx && math::abs(fx - fxn) <= budget.tol * math::abs(fxn).max(floor),
        };
        core::mem::swap(&mut x, &mut xn);
        ax = axn;
        fx = fxn;
        if converged {
            break;
        }
    }
    Ok(ProxOutcome {
        x: best,
        objective: f_best,
        iterations,
    })
}
