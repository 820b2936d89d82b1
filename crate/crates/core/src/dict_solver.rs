//! Dictionary update with activations frozen:
//! `min ‖Y − Σ_k D_k ⋆ Z_k‖_F²` subject to `‖D_k‖_F ≤ 1`.

use alloc::vec::Vec;

use crate::activations::ActivationSource;
use crate::error::Result;
use crate::math;
use crate::mode_solver::SolveBudget;
use crate::model::{check_pairing, reconstruct_with, ActivationSet, Dictionary};
use crate::prox::{fista, power_iteration, ProxProblem, LIPSCHITZ_SAFETY};
use crate::tensor::DenseTensor;

/// Default budget of the dictionary step.
pub const DICT_BUDGET: SolveBudget = SolveBudget::new(200, 1e-8);

/// Euclidean projection onto the closed Frobenius unit ball.
pub fn project_unit_ball(atom: &DenseTensor) -> DenseTensor {
    let n = atom.norm();
    let mut out = atom.clone();
    if n > 1.0 {
        out.scale(1.0 / n);
    }
    out
}

fn project_in_place(v: &mut [f64]) {
    let n = math::norm(v);
    if n > 1.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Gradient of `‖Y − Σ_k D_k ⋆ [[Z_k]]‖_F²` with respect to each atom:
/// `−2 · correlate_valid(residual, [[Z_k]])`.
pub fn dict_gradient(
    y: &DenseTensor,
    dict: &Dictionary,
    acts: &ActivationSet,
) -> Result<Vec<DenseTensor>> {
    dict_gradient_with(y, dict, acts.entries())
}

pub(crate) fn dict_gradient_with<A: ActivationSource>(
    y: &DenseTensor,
    dict: &Dictionary,
    acts: &[A],
) -> Result<Vec<DenseTensor>> {
    check_pairing(y.shape(), dict, &acts[0].act_shape(), acts.len())?;
    let residual = y.sub(&reconstruct_with(dict, acts)?)?;
    acts.iter()
        .map(|z| {
            let mut g = if z.is_zero() {
                DenseTensor::zeros(dict.atom_shape())?
            } else {
                z.correlate(&residual)?
            };
            g.scale(-2.0);
            Ok(g)
        })
        .collect()
}

/// The linear map `D ↦ Σ_k D_k ⋆ Z_k` on concatenated atoms.
struct DictOperator<'a, A> {
    acts: &'a [A],
    atom_shape: Vec<usize>,
    atom_len: usize,
    signal_shape: Vec<usize>,
}

impl<'a, A: ActivationSource> DictOperator<'a, A> {
    fn forward(&self, d: &[f64]) -> Result<DenseTensor> {
        let mut out = DenseTensor::zeros(&self.signal_shape)?;
        for (k, z) in self.acts.iter().enumerate() {
            let atom_vals = &d[k * self.atom_len..(k + 1) * self.atom_len];
            if z.is_zero() || atom_vals.iter().all(|v| *v == 0.0) {
                continue;
            }
            let atom = DenseTensor::new(self.atom_shape.clone(), atom_vals.to_vec())?;
            out.axpy(1.0, &z.convolve(&atom)?)?;
        }
        Ok(out)
    }

    fn adjoint(&self, r: &DenseTensor, out: &mut [f64]) -> Result<()> {
        for (k, z) in self.acts.iter().enumerate() {
            let dst = &mut out[k * self.atom_len..(k + 1) * self.atom_len];
            if z.is_zero() {
                dst.iter_mut().for_each(|v| *v = 0.0);
            } else {
                dst.copy_from_slice(z.correlate(r)?.as_slice());
            }
        }
        Ok(())
    }
}

struct DictQuadratic<'a, 'b, A> {
    op: DictOperator<'a, A>,
    y: &'b DenseTensor,
    y_sq: f64,
}

impl<A: ActivationSource> ProxProblem for DictQuadratic<'_, '_, A> {
    fn dim(&self) -> usize {
        self.op.acts.len() * self.op.atom_len
    }

    fn image(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.op.forward(x)?.into_vec())
    }

    fn smooth(&self, _x: &[f64], ax: &[f64]) -> f64 {
        self.y
            .as_slice()
            .iter()
            .zip(ax)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    fn gradient(&self, _x: &[f64], ax: &[f64], out: &mut [f64]) -> Result<()> {
        let r: Vec<f64> = self
            .y
            .as_slice()
            .iter()
            .zip(ax)
            .map(|(a, b)| a - b)
            .collect();
        let r = DenseTensor::new(self.y.shape().to_vec(), r)?;
        self.op.adjoint(&r, out)?;
        out.iter_mut().for_each(|g| *g *= -2.0);
        Ok(())
    }

    fn prox(&self, v: &mut [f64], _step: f64) {
        for atom in v.chunks_mut(self.op.atom_len) {
            project_in_place(atom);
        }
    }

    fn nonsmooth(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn lipschitz(&self) -> Result<f64> {
        let lambda = power_iteration(self.dim(), |v, out| {
            let fwd = self.op.forward(v)?;
            self.op.adjoint(&fwd, out)
        })?;
        Ok(2.0 * lambda * LIPSCHITZ_SAFETY)
    }

    fn magnitude(&self) -> f64 {
        self.y_sq
    }
}

/// Projected accelerated gradient on the atoms; never increases the
/// objective relative to `dict0`.
pub fn update_dictionary(
    y: &DenseTensor,
    dict0: &Dictionary,
    acts: &ActivationSet,
    budget: SolveBudget,
) -> Result<Dictionary> {
    update_dictionary_with(y, dict0, acts.entries(), budget).map(|(d, _)| d)
}

pub(crate) fn update_dictionary_with<A: ActivationSource>(
    y: &DenseTensor,
    dict0: &Dictionary,
    acts: &[A],
    budget: SolveBudget,
) -> Result<(Dictionary, usize)> {
    let m = acts[0].act_shape();
    check_pairing(y.shape(), dict0, &m, acts.len())?;
    let op = DictOperator {
        acts,
        atom_shape: dict0.atom_shape().to_vec(),
        atom_len: dict0.atom(0).len(),
        signal_shape: y.shape().to_vec(),
    };
    let quad = DictQuadratic {
        op,
        y,
        y_sq: y.norm_sq(),
    };
    let x0: Vec<f64> = dict0
        .atoms()
        .iter()
        .flat_map(|a| a.as_slice().iter().copied())
        .collect();
    let out = fista(&quad, x0, budget, &|| "dictionary solver".into())?;
    if out.iterations == 0 {
        return Ok((dict0.clone(), 0));
    }
    let atoms = out
        .x
        .chunks(quad.op.atom_len)
        .map(|c| DenseTensor::new(quad.op.atom_shape.clone(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((Dictionary::new(atoms)?, out.iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{FactorMatrix, KruskalTensor};
    use alloc::vec;

    fn delta_acts(m: usize) -> ActivationSet {
        let mut col = vec![0.0; m];
        col[0] = 1.0;
        let f = FactorMatrix::new(m, 1, col).unwrap();
        ActivationSet::new(vec![KruskalTensor::new(vec![f]).unwrap()]).unwrap()
    }

    #[test]
    fn projection_cases() {
        let z = DenseTensor::zeros(&[3]).unwrap();
        assert_eq!(project_unit_ball(&z), z);
        let a = DenseTensor::new(vec![2], vec![0.0, 2.0]).unwrap();
        assert_eq!(project_unit_ball(&a).as_slice(), &[0.0, 1.0]);
        let b = DenseTensor::new(vec![2], vec![0.0, 0.9]).unwrap();
        assert_eq!(project_unit_ball(&b), b);
    }

    #[test]
    fn delta_activation_recovers_window() {
        // Z = δ_0, so the least-squares atom is the first w samples of Y
        let y = DenseTensor::new(vec![6], vec![0.3, -0.4, 0.5, 2.0, -1.0, 0.7]).unwrap();
        let d0 = Dictionary::new(vec![DenseTensor::zeros(&[3]).unwrap()]).unwrap();
        let d = update_dictionary(&y, &d0, &delta_acts(4), DICT_BUDGET).unwrap();
        for (a, b) in d.atom(0).as_slice().iter().zip(&[0.3, -0.4, 0.5]) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_activations_leave_dictionary() {
        let y = DenseTensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let d0 = Dictionary::new(vec![DenseTensor::new(vec![2], vec![0.6, 0.0]).unwrap()]).unwrap();
        let acts = ActivationSet::zeros(1, &[3], 2).unwrap();
        assert_eq!(update_dictionary(&y, &d0, &acts, DICT_BUDGET).unwrap(), d0);
    }

    #[test]
    fn delta_gradient_is_windowed_residual() {
        let y = DenseTensor::new(vec![5], vec![1.0, -1.0, 2.0, 0.5, 0.0]).unwrap();
        let d = Dictionary::new(vec![DenseTensor::new(vec![2], vec![0.6, 0.0]).unwrap()]).unwrap();
        let g = dict_gradient(&y, &d, &delta_acts(4)).unwrap();
        // residual = y - [0.6, 0, 0, 0, 0]
        assert_eq!(g[0].as_slice(), &[-2.0 * 0.4, -2.0 * -1.0]);
    }
}
