//! Plain row-major matrix kernels. `out` is accumulated into, not overwritten.

use super::Real;

/// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn nn<R: Real>(a: &[R], b: &[R], out: &mut [R], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == R::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn nt<R: Real>(a: &[R], b: &[R], out: &mut [R], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let dot = a_row.iter().zip(b_row).fold(R::zero(), |acc, (&x, &y)| acc + x * y);
            out[i * n + j] = out[i * n + j] + dot;
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · b[m×n]
pub(crate) fn tn<R: Real>(a: &[R], b: &[R], out: &mut [R], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == R::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aip * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn kernels_agree_with_triple_loop() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|v| (v as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);

        let mut out = vec![0.0; m * n];
        nn(&a, &b, &mut out, m, k, n);
        assert!(out.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let mut out = vec![0.0; m * n];
        nt(&a, &transpose(&b, k, n), &mut out, m, k, n);
        assert!(out.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let mut out = vec![0.0; m * n];
        tn(&transpose(&a, m, k), &b, &mut out, k, m, n);
        assert!(out.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
