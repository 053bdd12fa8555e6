//! Raw buffer kernels shared by the autodiff graph and the no-grad
//! inference path. Keeping one set of kernels means the two paths agree
//! bit-for-bit wherever they evaluate the same expression.

use super::scalar::Scalar;

/// out[m x n] = a[m x k] @ b[k x n]
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    // i-k-j order: the inner loop is a saxpy over a contiguous row of b,
    // which the compiler vectorizes.
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// out[m x n] = a[m x k] @ b[n x k]^T
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *o = acc;
        }
    }
    out
}

/// out[k x n] = a[m x k]^T @ b[m x n]
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Numerically stable row softmax, in place. `cols` is the softmax axis.
pub fn softmax_rows_inplace<T: Scalar>(x: &mut [T], cols: usize) {
    debug_assert_eq!(x.len() % cols, 0);
    for row in x.chunks_mut(cols) {
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Row-wise log-softmax, in place.
pub fn log_softmax_rows_inplace<T: Scalar>(x: &mut [T], cols: usize) {
    debug_assert_eq!(x.len() % cols, 0);
    for row in x.chunks_mut(cols) {
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for &v in row.iter() {
            sum += (v - max).exp();
        }
        let log_z = max + sum.ln();
        for v in row.iter_mut() {
            *v = *v - log_z;
        }
    }
}

/// Row-wise layer normalization without affine parameters, in place.
/// Variance is the biased (1/N) estimate.
pub fn layer_norm_rows_inplace<T: Scalar>(x: &mut [T], cols: usize, eps: T) {
    debug_assert_eq!(x.len() % cols, 0);
    let n = T::of(cols as f64);
    for row in x.chunks_mut(cols) {
        let mut mean = T::zero();
        for &v in row.iter() {
            mean += v;
        }
        mean = mean / n;
        let mut var = T::zero();
        for &v in row.iter() {
            let d = v - mean;
            var += d * d;
        }
        var = var / n;
        let inv_std = T::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv_std;
        }
    }
}

/// y += alpha * x
pub fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

pub fn all_finite<T: Scalar>(x: &[T]) -> bool {
    x.iter().all(|v| v.is_finite())
}
