//! Multi-dimensional FFTs over row-major arrays and a zero-padded linear
//! convolution with a radial kernel.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// In-place FFT along every axis of a row-major array with shape `dims`.
pub(crate) fn fft_nd(data: &mut [Complex64], dims: &[usize], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let total: usize = dims.iter().product();
    let mut stride = total;
    for &n in dims {
        stride /= n;
        if n == 1 {
            continue;
        }
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let block = n * stride;
        for outer in 0..total / block {
            for inner in 0..stride {
                let base = outer * block + inner;
                for (k, x) in line.iter_mut().enumerate() {
                    *x = data[base + k * stride];
                }
                fft.process(&mut line);
                for (k, x) in line.iter().enumerate() {
                    data[base + k * stride] = *x;
                }
            }
        }
    }
}

/// Signed frequency index of FFT bin `j` out of `n` (range `[-n/2, n/2)`).
#[inline]
pub(crate) fn signed_bin(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// `out(i) = Σ_j K(i - j) f(j)` on a `d`-cube of side `n`, where the kernel is
/// given as a function of the integer offset. Computed by zero padding to `2n`.
pub(crate) fn convolve(vals: &[f64], d: usize, n: usize, kernel: impl Fn(&[i64]) -> f64) -> Vec<f64> {
    let m = 2 * n;
    let dims = vec![m; d];
    let total = m.pow(d as u32);
    let mut fk = vec![Complex64::new(0.0, 0.0); total];
    let mut kk = vec![Complex64::new(0.0, 0.0); total];
    let mut idx = vec![0usize; d];
    let mut off = vec![0i64; d];
    for flat in 0..total {
        let mut r = flat;
        for a in (0..d).rev() {
            idx[a] = r % m;
            r /= m;
        }
        if idx.iter().all(|&i| i < n) {
            let mut src = 0;
            for &i in &idx {
                src = src * n + i;
            }
            fk[flat].re = vals[src];
        }
        let mut valid = true;
        for a in 0..d {
            off[a] = signed_bin(idx[a], m);
            if off[a] == -(n as i64) {
                valid = false;
            }
        }
        if valid {
            kk[flat].re = kernel(&off);
        }
    }
    fft_nd(&mut fk, &dims, false);
    fft_nd(&mut kk, &dims, false);
    for (a, b) in fk.iter_mut().zip(&kk) {
        *a *= b;
    }
    fft_nd(&mut fk, &dims, true);
    let scale = 1.0 / total as f64;
    let mut out = vec![0.0; n.pow(d as u32)];
    for (o, slot) in out.iter_mut().enumerate() {
        let mut r = o;
        let mut flat = 0;
        let mut mul = 1;
        for _ in 0..d {
            flat += (r % n) * mul;
            r /= n;
            mul *= m;
        }
        *slot = fk[flat].re * scale;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_matches_direct_sum() {
        let (d, n) = (2, 6);
        let vals: Vec<f64> = (0..n * n).map(|i| ((i * 7 % 5) as f64) - 1.5).collect();
        let k = |o: &[i64]| 1.0 / (1.0 + (o[0] * o[0] + 2 * o[1] * o[1]) as f64);
        let fast = convolve(&vals, d, n, k);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += k(&[i as i64 - a as i64, j as i64 - b as i64]) * vals[a * n + b];
                    }
                }
                assert!((fast[i * n + j] - s).abs() < 1e-12);
            }
        }
    }
}
