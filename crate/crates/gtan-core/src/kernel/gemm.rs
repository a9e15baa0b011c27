//! Thin wrappers over the blocked GEMM kernel.
//!
//! `matrixmultiply` provides the cache-blocked inner kernel; these wrappers
//! fix the row-major layouts used everywhere in this crate, including the
//! transposed views needed by the backward rules.

/// c = a (m x k) * b (k x n), overwriting c.
pub fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// da += dc (m x n) * b^T, where b is k x n and da is m x k.
pub fn accum_a_grad(m: usize, k: usize, n: usize, dc: &[f64], b: &[f64], da: &mut [f64]) {
    debug_assert_eq!(dc.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(da.len(), m * k);
    // b^T is n x k: stepping a row of b^T walks a column of b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            k,
            1.0,
            dc.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            1.0,
            da.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// db += a^T * dc, where a is m x k, dc is m x n and db is k x n.
pub fn accum_b_grad(m: usize, k: usize, n: usize, a: &[f64], dc: &[f64], db: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(dc.len(), m * n);
    debug_assert_eq!(db.len(), k * n);
    unsafe {
        matrixmultiply::dgemm(
            k,
            m,
            n,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            dc.as_ptr(),
            n as isize,
            1,
            1.0,
            db.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
