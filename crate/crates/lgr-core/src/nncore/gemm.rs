//! Blocked matrix multiply shared by convolution (via im2col) and linear
//! layers.
//!
//! Row-major everywhere. The loop order is k-blocked then row-blocked so
//! that a panel of `b` stays hot in L2 while a small strip of `c` rows
//! stays in L1; the inner j-loop is contiguous on both `b` and `c` and
//! autovectorizes. Accumulation order is fixed, so results are bitwise
//! reproducible for fixed inputs.

use crate::Scalar;

/// Rows of `c` updated per pass over a `b` panel.
const ROW_BLOCK: usize = 8;
/// Depth of the `b` panel kept resident between row strips.
const K_BLOCK: usize = 256;

/// `c[m x n] += a[m x k] * b[k x n]`.
///
/// Panics on slice length mismatch; shape agreement is the caller's
/// contract, not a runtime condition.
pub fn gemm_add<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k, "gemm a buffer");
    assert_eq!(b.len(), k * n, "gemm b buffer");
    assert_eq!(c.len(), m * n, "gemm c buffer");
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    for k0 in (0..k).step_by(K_BLOCK) {
        let kb = K_BLOCK.min(k - k0);
        for i0 in (0..m).step_by(ROW_BLOCK) {
            let ib = ROW_BLOCK.min(m - i0);
            for kk in k0..k0 + kb {
                let brow = &b[kk * n..kk * n + n];
                for i in i0..i0 + ib {
                    let aik = a[i * k + kk];
                    if aik == S::zero() {
                        continue;
                    }
                    let crow = &mut c[i * n..i * n + n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv = *cv + aik * bv;
                    }
                }
            }
        }
    }
}

/// `c[k x n] += a^T[k x m] * b[m x n]` with `a` stored `m x k` row-major.
///
/// Used for weight gradients: `a` is the activation matrix, `b` the
/// upstream gradient.
pub fn gemm_at_add<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k, "gemm a buffer");
    assert_eq!(b.len(), m * n, "gemm b buffer");
    assert_eq!(c.len(), k * n, "gemm c buffer");
    for i in 0..m {
        let arow = &a[i * k..i * k + k];
        let brow = &b[i * n..i * n + n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == S::zero() {
                continue;
            }
            let crow = &mut c[kk * n..kk * n + n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + aik * bv;
            }
        }
    }
}
