#![allow(dead_code)]

use krusco_core::{DenseTensor, FactorMatrix, KruskalTensor, ModeProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn shape(rng: &mut ChaCha8Rng, order: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..order).map(|_| rng.random_range(lo..=hi)).collect()
}

pub fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

pub fn factor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> FactorMatrix {
    let data = (0..rows * cols)
        .map(|_| {
            if rng.random::<f64>() < density {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .collect();
    FactorMatrix::new(rows, cols, data).unwrap()
}

pub fn kruskal(rng: &mut ChaCha8Rng, shape: &[usize], rank: usize, density: f64) -> KruskalTensor {
    KruskalTensor::new(
        shape
            .iter()
            .map(|&m| factor(rng, m, rank, density))
            .collect(),
    )
    .unwrap()
}

/// Multi-index iteration in row-major order.
pub fn indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let total: usize = shape.iter().product();
    let mut idx = vec![0; shape.len()];
    for _ in 0..total {
        out.push(idx.clone());
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// `out[i] = Σ_j a[j] · z[i − j]`, written from the definition.
pub fn naive_conv(a: &DenseTensor, z: &DenseTensor) -> DenseTensor {
    let n: Vec<usize> = a
        .shape()
        .iter()
        .zip(z.shape())
        .map(|(w, m)| w + m - 1)
        .collect();
    DenseTensor::from_fn(&n, |i| {
        let mut acc = 0.0;
        for j in indices(a.shape()) {
            let k: Option<Vec<usize>> = i
                .iter()
                .zip(&j)
                .zip(z.shape())
                .map(|((i, j), m)| (i >= j && i - j < *m).then(|| i - j))
                .collect();
            if let Some(k) = k {
                acc += a.get(&j) * z.get(&k);
            }
        }
        acc
    })
    .unwrap()
}

/// `Σ_r Π_l U_l[i_l, r]` entry by entry.
pub fn brute_cp(kt: &KruskalTensor) -> DenseTensor {
    DenseTensor::from_fn(&kt.shape(), |i| {
        (0..kt.rank())
            .map(|r| {
                i.iter()
                    .enumerate()
                    .map(|(l, &il)| kt.factor(l).get(il, r))
                    .product::<f64>()
            })
            .sum()
    })
    .unwrap()
}

pub fn rel_err(a: &DenseTensor, b: &DenseTensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let d = a.sub(b).unwrap().norm();
    d / b.norm().max(1e-300)
}

/// Cyclic coordinate descent on the explicit design matrix of a mode
/// problem, run until no coordinate moves by more than `1e-15`.
pub fn cd_lasso(p: &ModeProblem) -> Vec<f64> {
    let dim = p.sources() * p.act_len();
    let y = p.y_unfolded().as_slice().to_vec();
    let cols: Vec<Vec<f64>> = (0..dim)
        .map(|j| {
            let mut e = vec![0.0; dim];
            e[j] = 1.0;
            p.forward(&e)
        })
        .collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut z = vec![0.0; dim];
    let mut r = y.clone();
    for _ in 0..200_000 {
        let mut moved = 0.0f64;
        for j in 0..dim {
            if sq[j] == 0.0 {
                continue;
            }
            let rho: f64 = cols[j].iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() + sq[j] * z[j];
            let t = 2.0 * rho;
            let new = if t > p.alpha {
                (t - p.alpha) / (2.0 * (sq[j] + p.beta))
            } else if t < -p.alpha {
                (t + p.alpha) / (2.0 * (sq[j] + p.beta))
            } else {
                0.0
            };
            let delta = new - z[j];
            if delta != 0.0 {
                for (ri, ci) in r.iter_mut().zip(&cols[j]) {
                    *ri -= delta * ci;
                }
                z[j] = new;
                moved = moved.max(delta.abs());
            }
        }
        if moved < 1e-15 {
            break;
        }
    }
    z
}

pub fn dictionary(rng: &mut ChaCha8Rng, k: usize, w: &[usize]) -> krusco_core::Dictionary {
    let atoms = (0..k)
        .map(|_| krusco_core::project_unit_ball(&tensor(rng, w)))
        .collect();
    krusco_core::Dictionary::new(atoms).unwrap()
}
