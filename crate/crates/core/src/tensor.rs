//! Dense and CP-factored (Kruskal) tensors.
//!
//! Dense tensors are stored row-major, last index fastest. Factor matrices
//! are stored column-major so that each rank-one component `z_r` is a
//! contiguous slice.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Order-`p` array of `f64` with explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor order must be at least 1".into()));
    }
    if let Some(pos) = shape.iter().position(|&n| n == 0) {
        return Err(Error::Shape(format!("extent of mode {pos} is zero")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::Shape("tensor size overflows usize".into()))
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Visit every multi-index of `shape` in row-major order.
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    if shape.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    loop {
        f(&idx);
        let mut d = shape.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    /// Build a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut data = Vec::with_capacity(len);
        for_each_index(shape, |idx| data.push(f(idx)));
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index order mismatch");
        let mut off = 0;
        for (i, (&x, &n)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(x < n, "index {x} out of bounds for mode {i} of extent {n}");
            off = off * n + x;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    pub fn norm(&self) -> f64 {
        math::norm(&self.data)
    }

    pub fn norm_sq(&self) -> f64 {
        math::norm_sq(&self.data)
    }

    pub fn l1_norm(&self) -> f64 {
        math::l1(&self.data)
    }

    /// Number of entries that are exactly nonzero.
    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    pub fn is_finite(&self) -> bool {
        math::all_finite(&self.data)
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(math::dot(&self.data, &other.data))
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Order-`p-1` sub-tensor obtained by fixing `mode` to `index`.
    ///
    /// Fails for order-1 tensors, whose slices would be scalars.
    pub fn slice_along(&self, mode: usize, index: usize) -> Result<Self> {
        let p = self.order();
        if mode >= p {
            return Err(Error::ModeOutOfRange { mode, order: p });
        }
        if p == 1 {
            return Err(Error::Shape("cannot slice an order-1 tensor".into()));
        }
        if index >= self.shape[mode] {
            return Err(Error::InvalidArgument(format!(
                "slice index {index} out of range for extent {}",
                self.shape[mode]
            )));
        }
        let outer: usize = self.shape[..mode].iter().product();
        let inner: usize = self.shape[mode + 1..].iter().product();
        let n = self.shape[mode];
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * n + index) * inner;
            data.extend_from_slice(&self.data[base..base + inner]);
        }
        let mut shape = self.shape.clone();
        shape.remove(mode);
        Ok(Self { shape, data })
    }

    /// Zero-pad every mode by `before[l]` leading and `after[l]` trailing entries.
    pub fn pad(&self, before: &[usize], after: &[usize]) -> Result<Self> {
        let p = self.order();
        if before.len() != p || after.len() != p {
            return Err(Error::Shape("padding order mismatch".into()));
        }
        let shape: Vec<usize> = (0..p)
            .map(|l| self.shape[l] + before[l] + after[l])
            .collect();
        let mut out = Self::zeros(&shape)?;
        let ostr = strides(&shape);
        let mut src = 0;
        for_each_index(&self.shape, |idx| {
            let off: usize = idx
                .iter()
                .zip(before)
                .zip(&ostr)
                .map(|((i, b), s)| (i + b) * s)
                .sum();
            out.data[off] = self.data[src];
            src += 1;
        });
        Ok(out)
    }

    /// Contiguous block of `extents` starting at `start`.
    pub fn window(&self, start: &[usize], extents: &[usize]) -> Result<Self> {
        let p = self.order();
        if start.len() != p || extents.len() != p {
            return Err(Error::Shape("window order mismatch".into()));
        }
        for l in 0..p {
            if start[l] + extents[l] > self.shape[l] {
                return Err(Error::Shape(format!(
                    "window [{}, {}) exceeds extent {} in mode {l}",
                    start[l],
                    start[l] + extents[l],
                    self.shape[l]
                )));
            }
        }
        let str_ = strides(&self.shape);
        Self::from_fn(extents, |idx| {
            let off: usize = idx
                .iter()
                .zip(start)
                .zip(&str_)
                .map(|((i, s0), s)| (i + s0) * s)
                .sum();
            self.data[off]
        })
    }
}

/// Mode-`mode` unfolding (0-based): an `n_mode × Π_{i≠mode} n_i` matrix whose
/// columns enumerate the remaining modes in row-major order.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<DenseTensor> {
    let p = t.order();
    if mode >= p {
        return Err(Error::ModeOutOfRange { mode, order: p });
    }
    let n = t.shape[mode];
    let outer: usize = t.shape[..mode].iter().product();
    let inner: usize = t.shape[mode + 1..].iter().product();
    let cols = outer * inner;
    let mut data = vec![0.0; n * cols];
    for o in 0..outer {
        for i in 0..n {
            let src = &t.data[(o * n + i) * inner..(o * n + i + 1) * inner];
            let dst = i * cols + o * inner;
            data[dst..dst + inner].copy_from_slice(src);
        }
    }
    DenseTensor::new(vec![n, cols], data)
}

/// Inverse of [`unfold`].
pub fn refold(mat: &DenseTensor, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    let len = check_shape(shape)?;
    let p = shape.len();
    if mode >= p {
        return Err(Error::ModeOutOfRange { mode, order: p });
    }
    let n = shape[mode];
    let cols = len / n;
    if mat.shape() != [n, cols] {
        return Err(Error::Shape(format!(
            "unfolded matrix {:?} does not match shape {:?} along mode {mode}",
            mat.shape(),
            shape
        )));
    }
    let outer: usize = shape[..mode].iter().product();
    let inner: usize = shape[mode + 1..].iter().product();
    let mut data = vec![0.0; len];
    for o in 0..outer {
        for i in 0..n {
            let src = i * cols + o * inner;
            let dst = (o * n + i) * inner;
            data[dst..dst + inner].copy_from_slice(&mat.data[src..src + inner]);
        }
    }
    DenseTensor::new(shape.to_vec(), data)
}

/// `rows × cols` matrix stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn new(rows: usize, cols: usize, col_major: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape("factor matrix must be non-empty".into()));
        }
        if col_major.len() != rows * cols {
            return Err(Error::Shape(format!(
                "factor {rows}x{cols} needs {} values, got {}",
                rows * cols,
                col_major.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            data: col_major,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Shape("factor columns have different lengths".into()));
        }
        Self::new(rows, cols, columns.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, r: usize) -> &[f64] {
        &self.data[r * self.rows..(r + 1) * self.rows]
    }

    pub fn column_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.rows..(r + 1) * self.rows]
    }

    pub fn get(&self, i: usize, r: usize) -> f64 {
        self.data[r * self.rows + i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn l1_norm(&self) -> f64 {
        math::l1(&self.data)
    }

    pub fn norm_sq(&self) -> f64 {
        math::norm_sq(&self.data)
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }
}

/// Rank-`R` tensor held as `p` factor matrices of shape `m_l × R`.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalTensor {
    factors: Vec<FactorMatrix>,
}

impl KruskalTensor {
    pub fn new(factors: Vec<FactorMatrix>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(Error::Shape(
                "a Kruskal tensor needs at least one factor".into(),
            ));
        };
        let rank = first.cols;
        if let Some(l) = factors.iter().position(|f| f.cols != rank) {
            return Err(Error::Shape(format!(
                "factor {l} has {} columns, factor 0 has {rank}",
                factors[l].cols
            )));
        }
        Ok(Self { factors })
    }

    pub fn zeros(shape: &[usize], rank: usize) -> Result<Self> {
        check_shape(shape)?;
        let factors = shape
            .iter()
            .map(|&m| FactorMatrix::zeros(m, rank))
            .collect::<Result<Vec<_>>>()?;
        Self::new(factors)
    }

    pub fn rank(&self) -> usize {
        self.factors[0].cols
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.rows).collect()
    }

    pub fn factor(&self, mode: usize) -> &FactorMatrix {
        &self.factors[mode]
    }

    pub fn factor_mut(&mut self, mode: usize) -> &mut FactorMatrix {
        &mut self.factors[mode]
    }

    pub fn factors(&self) -> &[FactorMatrix] {
        &self.factors
    }

    /// Replace the factor of `mode`, keeping its shape.
    pub fn set_factor(&mut self, mode: usize, f: FactorMatrix) -> Result<()> {
        let cur = &self.factors[mode];
        if cur.rows != f.rows || cur.cols != f.cols {
            return Err(Error::Shape(format!(
                "factor {mode} must stay {}x{}, got {}x{}",
                cur.rows, cur.cols, f.rows, f.cols
            )));
        }
        self.factors[mode] = f;
        Ok(())
    }

    /// Scalars stored in factored form: `R · Σ m_l`.
    pub fn param_count(&self) -> usize {
        self.rank() * self.factors.iter().map(|f| f.rows).sum::<usize>()
    }

    /// Scalars the dense equivalent would need: `Π m_l`.
    pub fn dense_param_count(&self) -> usize {
        self.factors.iter().map(|f| f.rows).product()
    }

    /// Nonzero entries of each factor matrix.
    pub fn nnz_per_mode(&self) -> Vec<usize> {
        self.factors.iter().map(FactorMatrix::nnz).collect()
    }

    pub fn to_dense(&self) -> DenseTensor {
        cp_reconstruct(self)
    }

    pub fn is_finite(&self) -> bool {
        self.factors.iter().all(|f| math::all_finite(&f.data))
    }
}

/// Outer product of the given vectors, row-major.
pub(crate) fn outer(vectors: &[&[f64]]) -> Vec<f64> {
    let mut acc = vec![1.0];
    for v in vectors {
        let mut next = Vec::with_capacity(acc.len() * v.len());
        for a in &acc {
            next.extend(v.iter().map(|x| a * x));
        }
        acc = next;
    }
    acc
}

/// The Kruskal operator: `Σ_r z_r^(1) ∘ … ∘ z_r^(p)`.
pub fn cp_reconstruct(kt: &KruskalTensor) -> DenseTensor {
    let shape = kt.shape();
    let len: usize = shape.iter().product();
    let mut data = vec![0.0; len];
    let mut cols: Vec<&[f64]> = Vec::with_capacity(kt.order());
    for r in 0..kt.rank() {
        cols.clear();
        cols.extend(kt.factors.iter().map(|f| f.column(r)));
        if cols.iter().any(|c| c.iter().all(|v| *v == 0.0)) {
            continue;
        }
        for (d, v) in data.iter_mut().zip(outer(&cols)) {
            *d += v;
        }
    }
    DenseTensor { shape, data }
}

/// Compare two Kruskal tensors through their reconstructions:
/// `‖[[a]] − [[b]]‖_F ≤ tol · ‖[[a]]‖_F`.
///
/// Factors are only identifiable up to column permutation and per-mode
/// scaling, so they are never compared directly.
pub fn kruskal_equivalent(a: &KruskalTensor, b: &KruskalTensor, tol: f64) -> Result<bool> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let da = cp_reconstruct(a);
    let db = cp_reconstruct(b);
    let diff = da.sub(&db)?.norm();
    Ok(diff <= tol * da.norm())
}
