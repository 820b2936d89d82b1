//! Full linear convolution (`n_l = m_l + w_l − 1`) and valid-mode
//! cross-correlation, in direct, spectral and separable flavours.
//!
//! With 0-based indices the full convolution is
//! `out[i] = Σ_j atom[j] · act[i − j]`, the activation being zero outside
//! its support.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fft;
use crate::tensor::{for_each_index, strides, DenseTensor, KruskalTensor};

/// Chooses between direct loops and spectral multiplication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvPolicy {
    /// Use the FFT path when the kernel has more than this many entries.
    pub fft_threshold: usize,
}

impl Default for ConvPolicy {
    fn default() -> Self {
        Self { fft_threshold: 64 }
    }
}

impl ConvPolicy {
    pub fn use_fft(&self, kernel_len: usize) -> bool {
        kernel_len > self.fft_threshold
    }
}

fn check_orders(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "convolution operands have orders {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn full_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().zip(b).map(|(x, y)| x + y - 1).collect()
}

/// Offsets of every index of `shape` inside a row-major buffer with `ostr` strides.
fn offsets_in(shape: &[usize], ostr: &[usize]) -> Vec<usize> {
    let mut offs = Vec::with_capacity(shape.iter().product());
    for_each_index(shape, |idx| {
        offs.push(idx.iter().zip(ostr).map(|(i, s)| i * s).sum());
    });
    offs
}

/// Direct nested-loop full convolution.
pub fn conv_full(atom: &DenseTensor, act: &DenseTensor) -> Result<DenseTensor> {
    check_orders(atom.shape(), act.shape())?;
    let shape = full_shape(atom.shape(), act.shape());
    let ostr = strides(&shape);
    let a_offs = offsets_in(atom.shape(), &ostr);
    let z_offs = offsets_in(act.shape(), &ostr);
    let mut out = DenseTensor::zeros(&shape)?;
    let o = out.as_mut_slice();
    for (zo, &zv) in z_offs.iter().zip(act.as_slice()) {
        if zv == 0.0 {
            continue;
        }
        for (ao, &av) in a_offs.iter().zip(atom.as_slice()) {
            o[zo + ao] += av * zv;
        }
    }
    Ok(out)
}

/// Full convolution through zero-padded spectral multiplication.
pub fn conv_fft(atom: &DenseTensor, act: &DenseTensor) -> Result<DenseTensor> {
    check_orders(atom.shape(), act.shape())?;
    let shape = full_shape(atom.shape(), act.shape());
    let padded: Vec<usize> = shape.iter().map(|n| n.next_power_of_two()).collect();
    let mut fa = fft::embed(atom.as_slice(), atom.shape(), &padded);
    let mut fz = fft::embed(act.as_slice(), act.shape(), &padded);
    fft::fftn(&mut fa, &padded, false);
    fft::fftn(&mut fz, &padded, false);
    for (a, z) in fa.iter_mut().zip(&fz) {
        *a *= z;
    }
    fft::fftn(&mut fa, &padded, true);
    let scale = 1.0 / fa.len() as f64;
    let pstr = strides(&padded);
    DenseTensor::from_fn(&shape, |idx| {
        let off: usize = idx.iter().zip(&pstr).map(|(i, s)| i * s).sum();
        fa[off].re * scale
    })
}

/// [`conv_full`] or [`conv_fft`] depending on the atom size.
pub fn conv_auto(atom: &DenseTensor, act: &DenseTensor, policy: ConvPolicy) -> Result<DenseTensor> {
    if policy.use_fft(atom.len()) {
        conv_fft(atom, act)
    } else {
        conv_full(atom, act)
    }
}

/// Full 1-D convolution of `t` with `v` along `mode`.
pub(crate) fn conv_along_mode(t: &DenseTensor, mode: usize, v: &[f64]) -> DenseTensor {
    let shape = t.shape();
    let n = shape[mode];
    let outer: usize = shape[..mode].iter().product();
    let inner: usize = shape[mode + 1..].iter().product();
    let out_n = n + v.len() - 1;
    let mut out_shape = shape.to_vec();
    out_shape[mode] = out_n;
    let mut out = vec![0.0; outer * out_n * inner];
    let src = t.as_slice();
    for o in 0..outer {
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            for i in 0..n {
                let s = &src[(o * n + i) * inner..(o * n + i + 1) * inner];
                let d0 = (o * out_n + i + j) * inner;
                for (d, x) in out[d0..d0 + inner].iter_mut().zip(s) {
                    *d += vj * x;
                }
            }
        }
    }
    DenseTensor::new(out_shape, out).expect("extents stay positive")
}

/// Valid 1-D cross-correlation along `mode`:
/// `out[.., j, ..] = Σ_i t[.., i + j, ..] · v[i]`, `j < n − len(v) + 1`.
pub(crate) fn correlate_along_mode(t: &DenseTensor, mode: usize, v: &[f64]) -> DenseTensor {
    let shape = t.shape();
    let n = shape[mode];
    debug_assert!(v.len() <= n);
    let outer: usize = shape[..mode].iter().product();
    let inner: usize = shape[mode + 1..].iter().product();
    let out_n = n - v.len() + 1;
    let mut out_shape = shape.to_vec();
    out_shape[mode] = out_n;
    let mut out = vec![0.0; outer * out_n * inner];
    let src = t.as_slice();
    for o in 0..outer {
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for j in 0..out_n {
                let s0 = (o * n + i + j) * inner;
                let d0 = (o * out_n + j) * inner;
                for (d, x) in out[d0..d0 + inner].iter_mut().zip(&src[s0..s0 + inner]) {
                    *d += vi * x;
                }
            }
        }
    }
    DenseTensor::new(out_shape, out).expect("extents stay positive")
}

/// Separable full convolution of `atom` with a Kruskal activation: every
/// rank-one term is applied as `p` successive 1-D convolutions.
pub fn conv_separable(atom: &DenseTensor, act: &KruskalTensor) -> Result<DenseTensor> {
    let m = act.shape();
    check_orders(atom.shape(), &m)?;
    let shape = full_shape(atom.shape(), &m);
    let mut out = DenseTensor::zeros(&shape)?;
    for r in 0..act.rank() {
        if act
            .factors()
            .iter()
            .any(|f| f.column(r).iter().all(|v| *v == 0.0))
        {
            continue;
        }
        let mut t = conv_along_mode(atom, 0, act.factor(0).column(r));
        for l in 1..act.order() {
            t = conv_along_mode(&t, l, act.factor(l).column(r));
        }
        out.axpy(1.0, &t)?;
    }
    Ok(out)
}

/// Valid-mode cross-correlation: `out[j] = Σ_i t[i + j] · kernel[i]`, with
/// output extents `n_l − k_l + 1`.
pub fn correlate_valid(t: &DenseTensor, kernel: &DenseTensor) -> Result<DenseTensor> {
    check_orders(t.shape(), kernel.shape())?;
    if t.shape().iter().zip(kernel.shape()).any(|(n, k)| k > n) {
        return Err(Error::Shape(format!(
            "kernel {:?} larger than signal {:?}",
            kernel.shape(),
            t.shape()
        )));
    }
    let out_shape: Vec<usize> = t
        .shape()
        .iter()
        .zip(kernel.shape())
        .map(|(n, k)| n - k + 1)
        .collect();
    let tstr = strides(t.shape());
    let k_offs = offsets_in(kernel.shape(), &tstr);
    let o_offs = offsets_in(&out_shape, &tstr);
    let src = t.as_slice();
    let mut data = Vec::with_capacity(o_offs.len());
    for oo in &o_offs {
        let mut acc = 0.0;
        for (ko, &kv) in k_offs.iter().zip(kernel.as_slice()) {
            acc += src[oo + ko] * kv;
        }
        data.push(acc);
    }
    DenseTensor::new(out_shape, data)
}

/// Valid-mode cross-correlation computed spectrally.
pub(crate) fn correlate_valid_fft(t: &DenseTensor, kernel: &DenseTensor) -> Result<DenseTensor> {
    check_orders(t.shape(), kernel.shape())?;
    // correlation with k == convolution with the flipped kernel, read at offset k - 1
    let kshape = kernel.shape();
    let flipped = DenseTensor::from_fn(kshape, |idx| {
        let rev: Vec<usize> = idx.iter().zip(kshape).map(|(i, k)| k - 1 - i).collect();
        kernel.get(&rev)
    })?;
    let full = conv_fft(&flipped, t)?;
    let start: Vec<usize> = kshape.iter().map(|k| k - 1).collect();
    let extents: Vec<usize> = t
        .shape()
        .iter()
        .zip(kshape)
        .map(|(n, k)| n - k + 1)
        .collect();
    full.window(&start, &extents)
}

pub(crate) fn correlate_auto(
    t: &DenseTensor,
    kernel: &DenseTensor,
    policy: ConvPolicy,
) -> Result<DenseTensor> {
    // direct cost is |out| * |kernel|, so the smaller side decides
    let out_len: usize = t
        .shape()
        .iter()
        .zip(kernel.shape())
        .map(|(n, k)| (n + 1).saturating_sub(*k))
        .product();
    if policy.use_fft(kernel.len().min(out_len)) {
        correlate_valid_fft(t, kernel)
    } else {
        correlate_valid(t, kernel)
    }
}

/// Valid correlation of `t` with a Kruskal kernel, term by term along modes.
pub(crate) fn correlate_separable(t: &DenseTensor, kernel: &KruskalTensor) -> Result<DenseTensor> {
    let ks = kernel.shape();
    check_orders(t.shape(), &ks)?;
    let out_shape: Vec<usize> = t.shape().iter().zip(&ks).map(|(n, k)| n + 1 - k).collect();
    let mut out = DenseTensor::zeros(&out_shape)?;
    for r in 0..kernel.rank() {
        if kernel
            .factors()
            .iter()
            .any(|f| f.column(r).iter().all(|v| *v == 0.0))
        {
            continue;
        }
        let mut acc = correlate_along_mode(t, 0, kernel.factor(0).column(r));
        for l in 1..kernel.order() {
            acc = correlate_along_mode(&acc, l, kernel.factor(l).column(r));
        }
        out.axpy(1.0, &acc)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FactorMatrix;

    fn vec1(v: &[f64]) -> DenseTensor {
        DenseTensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn delta_kernel() {
        let act = vec1(&[3.0, -1.0, 2.0]);
        assert_eq!(conv_full(&vec1(&[1.0]), &act).unwrap(), act);
    }

    #[test]
    fn two_tap() {
        let out = conv_full(&vec1(&[1.0, 2.0]), &vec1(&[1.0, 1.0])).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 3.0, 2.0]);
        let out = conv_fft(&vec1(&[1.0, 2.0]), &vec1(&[1.0, 1.0])).unwrap();
        for (a, b) in out.as_slice().iter().zip(&[1.0, 3.0, 2.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_atom_fft() {
        let atom = DenseTensor::zeros(&[3, 2]).unwrap();
        let act = DenseTensor::from_fn(&[4, 5], |i| (i[0] * 5 + i[1]) as f64).unwrap();
        let out = conv_fft(&atom, &act).unwrap();
        assert_eq!(out.shape(), &[6, 6]);
        assert!(out.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn order_mismatch() {
        let a = DenseTensor::zeros(&[2]).unwrap();
        let b = DenseTensor::zeros(&[2, 2]).unwrap();
        assert!(matches!(conv_full(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(conv_fft(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn separable_ones() {
        let atom = DenseTensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        let f = FactorMatrix::from_columns(&[&[1.0, 1.0]]).unwrap();
        let act = KruskalTensor::new(vec![f.clone(), f]).unwrap();
        let out = conv_separable(&atom, &act).unwrap();
        assert_eq!(
            out.as_slice(),
            &[1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]
        );
    }

    #[test]
    fn separable_delta_atom() {
        let atom = DenseTensor::new(vec![1, 1], vec![1.0]).unwrap();
        let a = FactorMatrix::from_columns(&[&[1.0, 2.0, 0.5]]).unwrap();
        let b = FactorMatrix::from_columns(&[&[-1.0, 3.0]]).unwrap();
        let act = KruskalTensor::new(vec![a, b]).unwrap();
        assert_eq!(conv_separable(&atom, &act).unwrap(), act.to_dense());
    }

    #[test]
    fn correlation_matches_fft_route() {
        let t =
            DenseTensor::from_fn(&[7, 6], |i| ((i[0] * 3 + i[1] * 5) % 7) as f64 - 3.0).unwrap();
        let k = DenseTensor::from_fn(&[3, 4], |i| (i[0] as f64) - 0.5 * i[1] as f64).unwrap();
        let a = correlate_valid(&t, &k).unwrap();
        let b = correlate_valid_fft(&t, &k).unwrap();
        assert_eq!(a.shape(), &[5, 3]);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
