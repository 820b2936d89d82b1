//! Iterative radix-2 FFT over power-of-two lengths and its n-dimensional
//! extension. Only used for linear convolution, where zero-padding to the
//! next power of two is free.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::math;

pub(crate) fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    // bit reversal
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| {
                let a = ang * k as f64;
                Complex64::new(math::cos(a), math::sin(a))
            })
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let u = buf[start + k];
                let v = buf[start + k + half] * twiddles[k];
                buf[start + k] = u + v;
                buf[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
}

/// Unnormalized n-dimensional transform of a row-major buffer. Every extent
/// must be a power of two.
pub(crate) fn fftn(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    let total: usize = shape.iter().product();
    debug_assert_eq!(total, data.len());
    let mut line = Vec::new();
    for axis in 0..shape.len() {
        let n = shape[axis];
        if n == 1 {
            continue;
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let outer = total / (n * inner);
        line.clear();
        line.resize(n, Complex64::new(0.0, 0.0));
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                for k in 0..n {
                    line[k] = data[base + k * inner];
                }
                fft_in_place(&mut line, inverse);
                for k in 0..n {
                    data[base + k * inner] = line[k];
                }
            }
        }
    }
}

/// Embed a real row-major tensor of `shape` into a zero buffer of `padded`.
pub(crate) fn embed(values: &[f64], shape: &[usize], padded: &[usize]) -> Vec<Complex64> {
    let total: usize = padded.iter().product();
    let mut out = vec![Complex64::new(0.0, 0.0); total];
    let pstr = crate::tensor::strides(padded);
    let mut src = 0;
    crate::tensor::for_each_index(shape, |idx| {
        let off: usize = idx.iter().zip(&pstr).map(|(i, s)| i * s).sum();
        out[off] = Complex64::new(values[src], 0.0);
        src += 1;
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let x: Vec<Complex64> = (0..8)
            .map(|i| Complex64::new(i as f64, -(i as f64) / 2.0))
            .collect();
        let mut y = x.clone();
        fft_in_place(&mut y, false);
        fft_in_place(&mut y, true);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b / 8.0).norm_sqr().sqrt() < 1e-12);
        }
    }

    #[test]
    fn impulse_is_flat() {
        let mut y = vec![Complex64::new(0.0, 0.0); 4];
        y[0] = Complex64::new(1.0, 0.0);
        fft_in_place(&mut y, false);
        assert!(y
            .iter()
            .all(|v| (v - Complex64::new(1.0, 0.0)).norm_sqr().sqrt() < 1e-15));
    }
}
