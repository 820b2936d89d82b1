//! The generative model `Y = Σ_k D_k ⋆ Z_k + ε`, its penalized objective
//! and the circulant (tensor-regression) view of the same linear map.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::activations::ActivationSource;
use crate::error::{Error, Result};
use crate::tensor::{check_shape, for_each_index, DenseTensor, KruskalTensor};

/// Largest circulant materialization allowed by [`circulant`].
pub const DEFAULT_CIRCULANT_BUDGET: usize = 10_000_000;

/// Slack on the unit-ball constraint of the atoms.
pub(crate) const NORM_SLACK: f64 = 1e-12;

/// `K` atoms of common shape `(w_1..w_p)`, each with `‖D_k‖_F ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Vec<DenseTensor>,
}

impl Dictionary {
    pub fn new(atoms: Vec<DenseTensor>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::InvalidArgument(
                "dictionary needs at least one atom".into(),
            ));
        };
        let shape = first.shape().to_vec();
        for (k, a) in atoms.iter().enumerate() {
            if a.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "atom {k} has shape {:?}, atom 0 has {:?}",
                    a.shape(),
                    shape
                )));
            }
            let n = a.norm();
            if n.is_nan() || n > 1.0 + NORM_SLACK {
                return Err(Error::InvalidArgument(format!(
                    "atom {k} has Frobenius norm {n} > 1"
                )));
            }
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[DenseTensor] {
        &self.atoms
    }

    pub fn atom(&self, k: usize) -> &DenseTensor {
        &self.atoms[k]
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom_shape(&self) -> &[usize] {
        self.atoms[0].shape()
    }

    pub fn into_atoms(self) -> Vec<DenseTensor> {
        self.atoms
    }
}

/// `K` Kruskal activations with common shape `(m_1..m_p)` and rank `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    entries: Vec<KruskalTensor>,
}

impl ActivationSet {
    pub fn new(entries: Vec<KruskalTensor>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::InvalidArgument("activation set is empty".into()));
        };
        let shape = first.shape();
        let rank = first.rank();
        for (k, e) in entries.iter().enumerate() {
            if e.shape() != shape || e.rank() != rank {
                return Err(Error::Shape(format!(
                    "activation {k} is {:?} rank {}, activation 0 is {:?} rank {rank}",
                    e.shape(),
                    e.rank(),
                    shape
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn zeros(k: usize, shape: &[usize], rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        let entries = (0..k)
            .map(|_| KruskalTensor::zeros(shape, rank))
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[KruskalTensor] {
        &self.entries
    }

    pub fn entry(&self, k: usize) -> &KruskalTensor {
        &self.entries[k]
    }

    pub fn entry_mut(&mut self, k: usize) -> &mut KruskalTensor {
        &mut self.entries[k]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.entries[0].shape()
    }

    pub fn rank(&self) -> usize {
        self.entries[0].rank()
    }

    pub fn order(&self) -> usize {
        self.entries[0].order()
    }

    /// Nonzero factor entries per mode, summed over atoms.
    pub fn nnz_per_mode(&self) -> Vec<usize> {
        let mut out = alloc::vec![0; self.order()];
        for e in &self.entries {
            for (o, n) in out.iter_mut().zip(e.nnz_per_mode()) {
                *o += n;
            }
        }
        out
    }

    pub fn total_nnz(&self) -> usize {
        self.nnz_per_mode().iter().sum()
    }

    /// `K · R · Σ m_l`.
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(KruskalTensor::param_count).sum()
    }

    /// `K · Π m_l`.
    pub fn dense_param_count(&self) -> usize {
        self.entries
            .iter()
            .map(KruskalTensor::dense_param_count)
            .sum()
    }

    pub fn into_entries(self) -> Vec<KruskalTensor> {
        self.entries
    }
}

/// Per-mode L1 weights `alpha` and ridge weights `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Penalty {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.len() != beta.len() {
            return Err(Error::InvalidArgument(format!(
                "{} alpha weights but {} beta weights",
                alpha.len(),
                beta.len()
            )));
        }
        if let Some(v) = alpha
            .iter()
            .chain(&beta)
            .find(|v| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "penalty weights must be finite and nonnegative, got {v}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn zeros(order: usize) -> Self {
        Self {
            alpha: alloc::vec![0.0; order],
            beta: alloc::vec![0.0; order],
        }
    }

    pub fn order(&self) -> usize {
        self.alpha.len()
    }
}

/// Value of the penalized objective and its three parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    /// `‖Y − Ŷ‖_F²`
    pub residual: f64,
    /// `Σ_{k,l} α_l ‖Z_{k,l}‖_1`
    pub l1: f64,
    /// `Σ_{k,l} β_l ‖Z_{k,l}‖_F²`
    pub ridge: f64,
}

impl ObjectiveBreakdown {
    pub(crate) fn new(residual: f64, l1: f64, ridge: f64) -> Self {
        Self {
            total: residual + l1 + ridge,
            residual,
            l1,
            ridge,
        }
    }
}

/// Signal extents paired with atom extents `w` and activation extents `m`.
pub(crate) fn signal_shape(w: &[usize], m: &[usize]) -> Vec<usize> {
    w.iter().zip(m).map(|(w, m)| w + m - 1).collect()
}

/// Check that `y`, `dict` and activations of shape `m` (K of them) fit together.
pub(crate) fn check_pairing(y: &[usize], dict: &Dictionary, m: &[usize], k: usize) -> Result<()> {
    let w = dict.atom_shape();
    if dict.len() != k {
        return Err(Error::Shape(format!(
            "{} atoms but {k} activation tensors",
            dict.len()
        )));
    }
    if y.len() != w.len() || m.len() != w.len() {
        return Err(Error::Shape(format!(
            "orders differ: signal {}, atoms {}, activations {}",
            y.len(),
            w.len(),
            m.len()
        )));
    }
    for l in 0..w.len() {
        if w[l] > y[l] || m[l] + w[l] != y[l] + 1 {
            return Err(Error::Shape(format!(
                "mode {l}: signal {}, atom {}, activation {} (need m = n - w + 1)",
                y[l], w[l], m[l]
            )));
        }
    }
    Ok(())
}

/// Noiseless model output `Σ_k D_k ⋆ Z_k` for any activation storage.
pub(crate) fn reconstruct_with<A: ActivationSource>(
    dict: &Dictionary,
    acts: &[A],
) -> Result<DenseTensor> {
    let m = acts[0].act_shape();
    let shape = signal_shape(dict.atom_shape(), &m);
    check_pairing(&shape, dict, &m, acts.len())?;
    let mut out = DenseTensor::zeros(&shape)?;
    for (atom, z) in dict.atoms().iter().zip(acts) {
        if z.is_zero() {
            continue;
        }
        out.axpy(1.0, &z.convolve(atom)?)?;
    }
    Ok(out)
}

/// `Σ_k D_k ⋆ [[Z_k]]` without noise.
pub fn reconstruct(dict: &Dictionary, acts: &ActivationSet) -> Result<DenseTensor> {
    reconstruct_with(dict, acts.entries())
}

/// Draw a signal from the model: `Σ_k D_k ⋆ [[Z_k]]` plus i.i.d. centered
/// Gaussian noise of standard deviation `noise_sigma`, seeded by `seed`.
pub fn synthesize(
    dict: &Dictionary,
    acts: &ActivationSet,
    noise_sigma: f64,
    seed: u64,
) -> Result<DenseTensor> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be finite and nonnegative, got {noise_sigma}"
        )));
    }
    let mut y = reconstruct(dict, acts)?;
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal =
            Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidArgument(format!("{e}")))?;
        for v in y.as_mut_slice() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(y)
}

pub(crate) fn penalty_terms(acts: &ActivationSet, pen: &Penalty) -> Result<(f64, f64)> {
    if pen.order() != acts.order() {
        return Err(Error::Shape(format!(
            "penalty has {} modes, activations have {}",
            pen.order(),
            acts.order()
        )));
    }
    let mut l1 = 0.0;
    let mut ridge = 0.0;
    for e in acts.entries() {
        for (l, f) in e.factors().iter().enumerate() {
            if pen.alpha[l] > 0.0 {
                l1 += pen.alpha[l] * f.l1_norm();
            }
            if pen.beta[l] > 0.0 {
                ridge += pen.beta[l] * f.norm_sq();
            }
        }
    }
    Ok((l1, ridge))
}

/// `‖Y − Σ_k D_k ⋆ [[Z_k]]‖_F² + Σ α_l‖Z_{k,l}‖_1 + Σ β_l‖Z_{k,l}‖_F²`.
///
/// The quadratic term carries no ½ factor.
pub fn objective(
    y: &DenseTensor,
    dict: &Dictionary,
    acts: &ActivationSet,
    pen: &Penalty,
) -> Result<ObjectiveBreakdown> {
    check_pairing(y.shape(), dict, &acts.shape(), acts.len())?;
    let residual = y.sub(&reconstruct(dict, acts)?)?.norm_sq();
    let (l1, ridge) = penalty_terms(acts, pen)?;
    Ok(ObjectiveBreakdown::new(residual, l1, ridge))
}

/// Dense materialization of the (quasi-)circulant tensor generated by an
/// atom, with modes interleaved as `(n_1, m_1, …, n_p, m_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CirculantTensor {
    atom_shape: Vec<usize>,
    signal_shape: Vec<usize>,
    values: DenseTensor,
}

impl CirculantTensor {
    pub fn atom_shape(&self) -> &[usize] {
        &self.atom_shape
    }

    pub fn signal_shape(&self) -> &[usize] {
        &self.signal_shape
    }

    pub fn act_shape(&self) -> Vec<usize> {
        self.signal_shape
            .iter()
            .zip(&self.atom_shape)
            .map(|(n, w)| n - w + 1)
            .collect()
    }

    pub fn values(&self) -> &DenseTensor {
        &self.values
    }

    /// Entry `(l_1, k_1, …, l_p, k_p)` given as separate signal / activation indices.
    pub fn get(&self, signal_idx: &[usize], act_idx: &[usize]) -> f64 {
        let idx: Vec<usize> = signal_idx
            .iter()
            .zip(act_idx)
            .flat_map(|(a, b)| [*a, *b])
            .collect();
        self.values.get(&idx)
    }

    /// The activation-shaped slice selected by one signal position.
    pub fn slice(&self, signal_idx: &[usize]) -> Result<DenseTensor> {
        if signal_idx.len() != self.signal_shape.len() {
            return Err(Error::Shape("signal index order mismatch".into()));
        }
        DenseTensor::from_fn(&self.act_shape(), |k| self.get(signal_idx, k))
    }
}

/// Materialize the circulant tensor of `atom` for `signal_shape`, refusing
/// anything over [`DEFAULT_CIRCULANT_BUDGET`] entries.
pub fn circulant(atom: &DenseTensor, signal_shape: &[usize]) -> Result<CirculantTensor> {
    circulant_with_budget(atom, signal_shape, DEFAULT_CIRCULANT_BUDGET)
}

pub fn circulant_with_budget(
    atom: &DenseTensor,
    signal_shape: &[usize],
    budget: usize,
) -> Result<CirculantTensor> {
    check_shape(signal_shape)?;
    let w = atom.shape();
    if w.len() != signal_shape.len() {
        return Err(Error::Shape(format!(
            "atom order {} vs signal order {}",
            w.len(),
            signal_shape.len()
        )));
    }
    if let Some(l) = (0..w.len()).find(|&l| w[l] > signal_shape[l]) {
        return Err(Error::Shape(format!(
            "atom extent {} exceeds signal extent {} in mode {l}",
            w[l], signal_shape[l]
        )));
    }
    let mut shape = Vec::with_capacity(2 * w.len());
    let mut required = 1usize;
    for (n, wl) in signal_shape.iter().zip(w) {
        let m = n - wl + 1;
        shape.push(*n);
        shape.push(m);
        required = required.saturating_mul(n * m);
    }
    if required > budget {
        return Err(Error::Capacity { required, budget });
    }
    let p = w.len();
    let mut aidx = alloc::vec![0usize; p];
    let values = DenseTensor::from_fn(&shape, |idx| {
        for i in 0..p {
            let (l, k) = (idx[2 * i], idx[2 * i + 1]);
            if l < k || l >= k + w[i] {
                return 0.0;
            }
            aidx[i] = l - k;
        }
        atom.get(&aidx)
    })?;
    Ok(CirculantTensor {
        atom_shape: w.to_vec(),
        signal_shape: signal_shape.to_vec(),
        values,
    })
}

/// The regression form of the model: entry `i` of the output is
/// `Σ_k ⟨Circ(D_k)(i_1, :, …, i_p, :), [[Z_k]]⟩_F`.
pub fn apply_linear_map(circs: &[CirculantTensor], acts: &ActivationSet) -> Result<DenseTensor> {
    if circs.len() != acts.len() {
        return Err(Error::Shape(format!(
            "{} circulants for {} activations",
            circs.len(),
            acts.len()
        )));
    }
    let m = acts.shape();
    let n = circs[0].signal_shape().to_vec();
    for c in circs {
        if c.signal_shape() != n.as_slice() || c.act_shape() != m {
            return Err(Error::Shape(format!(
                "circulant for signal {:?} / activation {:?} does not match activations {:?}",
                c.signal_shape(),
                c.act_shape(),
                m
            )));
        }
    }
    let dense: Vec<DenseTensor> = acts.entries().iter().map(KruskalTensor::to_dense).collect();
    DenseTensor::from_fn(&n, |i| {
        let mut acc = 0.0;
        for (c, z) in circs.iter().zip(&dense) {
            let mut pos = 0;
            for_each_index(&m, |k| {
                let zv = z.as_slice()[pos];
                pos += 1;
                if zv != 0.0 {
                    acc += c.get(i, k) * zv;
                }
            });
        }
        acc
    })
}

/// Dense counterpart of [`reconstruct`], used by the full-rank baseline.
pub fn reconstruct_dense(dict: &Dictionary, acts: &[DenseTensor]) -> Result<DenseTensor> {
    reconstruct_with(dict, acts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FactorMatrix;
    use alloc::vec;

    #[test]
    fn delta_atom_all_ones() {
        let dict = Dictionary::new(vec![DenseTensor::new(vec![1, 1], vec![1.0]).unwrap()]).unwrap();
        let a = FactorMatrix::from_columns(&[&[1.0; 3]]).unwrap();
        let b = FactorMatrix::from_columns(&[&[1.0; 4]]).unwrap();
        let acts = ActivationSet::new(vec![KruskalTensor::new(vec![a, b]).unwrap()]).unwrap();
        let y = synthesize(&dict, &acts, 0.0, 1).unwrap();
        assert_eq!(y.shape(), &[3, 4]);
        assert!(y.as_slice().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn zero_activations_give_zero_signal() {
        let dict =
            Dictionary::new(vec![DenseTensor::new(vec![2], vec![0.6, 0.8]).unwrap()]).unwrap();
        let acts = ActivationSet::zeros(1, &[4], 2).unwrap();
        let y = synthesize(&dict, &acts, 0.0, 0).unwrap();
        assert_eq!(y.as_slice(), &[0.0; 5]);
    }

    #[test]
    fn objective_of_zero_activations_is_signal_energy() {
        let dict =
            Dictionary::new(vec![DenseTensor::new(vec![2], vec![0.6, 0.8]).unwrap()]).unwrap();
        let acts = ActivationSet::zeros(1, &[4], 2).unwrap();
        let y = DenseTensor::new(vec![5], vec![1.0, -2.0, 0.5, 3.0, 0.0]).unwrap();
        let pen = Penalty::new(vec![7.0], vec![0.0]).unwrap();
        let o = objective(&y, &dict, &acts, &pen).unwrap();
        assert_eq!(o.total, y.norm_sq());
        assert_eq!(o.l1, 0.0);
    }

    #[test]
    fn dictionary_rejects_large_atoms() {
        let a = DenseTensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        assert!(Dictionary::new(vec![a]).is_err());
    }

    #[test]
    fn pairing_is_checked() {
        let dict =
            Dictionary::new(vec![DenseTensor::new(vec![2], vec![0.6, 0.8]).unwrap()]).unwrap();
        let acts = ActivationSet::zeros(1, &[4], 1).unwrap();
        let y = DenseTensor::zeros(&[6]).unwrap();
        let pen = Penalty::zeros(1);
        assert!(matches!(
            objective(&y, &dict, &acts, &pen),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn circulant_1d_by_hand() {
        let atom = DenseTensor::new(vec![2], vec![2.0, 5.0]).unwrap();
        let c = circulant(&atom, &[3]).unwrap();
        assert_eq!(c.values().shape(), &[3, 2]);
        assert_eq!(c.values().as_slice(), &[2.0, 0.0, 5.0, 2.0, 0.0, 5.0]);
    }

    #[test]
    fn circulant_budget() {
        let atom = DenseTensor::zeros(&[2, 2]).unwrap();
        let err = circulant_with_budget(&atom, &[6, 6], 100).unwrap_err();
        assert_eq!(
            err,
            Error::Capacity {
                required: 900,
                budget: 100
            }
        );
    }

    #[test]
    fn linear_map_by_hand() {
        let atom = DenseTensor::new(vec![2], vec![0.5, 0.5]).unwrap();
        let dict = Dictionary::new(vec![atom.clone()]).unwrap();
        let z = FactorMatrix::from_columns(&[&[1.0, 0.0]]).unwrap();
        let acts = ActivationSet::new(vec![KruskalTensor::new(vec![z]).unwrap()]).unwrap();
        let c = circulant(&atom, &[3]).unwrap();
        let y = apply_linear_map(&[c], &acts).unwrap();
        assert_eq!(y.as_slice(), &[0.5, 0.5, 0.0]);
        assert_eq!(y, synthesize(&dict, &acts, 0.0, 0).unwrap());
    }

    #[test]
    fn noise_is_seeded() {
        let dict =
            Dictionary::new(vec![DenseTensor::new(vec![2], vec![0.6, 0.8]).unwrap()]).unwrap();
        let acts = ActivationSet::zeros(1, &[40], 1).unwrap();
        let a = synthesize(&dict, &acts, 0.5, 3).unwrap();
        let b = synthesize(&dict, &acts, 0.5, 3).unwrap();
        let c = synthesize(&dict, &acts, 0.5, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let sd = libm::sqrt(a.norm_sq() / a.len() as f64);
        assert!(sd > 0.3 && sd < 0.7, "{sd}");
    }
}
