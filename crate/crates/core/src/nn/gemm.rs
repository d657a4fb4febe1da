use super::Real;

/// Row-major `C(m×n) ← A·B + β·C`.
///
/// `a` holds `A` (m×k) row-major, or `Aᵀ` (k×m) row-major when `a_t` is set;
/// likewise `b`/`b_t` for `B` (k×n).
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, beta: T, c: &mut [T]) {
    let lda = if a_t { m } else { k };
    let ldb = if b_t { k } else { n };
    matmul_ld(m, k, n, a, lda, a_t, b, ldb, b_t, beta, c, n);
}

/// [`matmul`] on sub-matrices: `lda`, `ldb` and `ldc` are the row strides
/// of the buffers as stored (so of `Aᵀ` when `a_t` is set).
#[allow(clippy::too_many_arguments)]
pub fn matmul_ld<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    lda: usize,
    a_t: bool,
    b: &[T],
    ldb: usize,
    b_t: bool,
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(ldc >= n && c.len() >= (m - 1) * ldc + n, "output buffer too small");
    if k == 0 {
        for row in c.chunks_mut(ldc).take(m) {
            for v in &mut row[..n] {
                *v *= beta;
            }
        }
        return;
    }
    let (a_rows, a_cols) = if a_t { (k, m) } else { (m, k) };
    let (b_rows, b_cols) = if b_t { (n, k) } else { (k, n) };
    assert!(lda >= a_cols && a.len() >= (a_rows - 1) * lda + a_cols, "lhs buffer too small");
    assert!(ldb >= b_cols && b.len() >= (b_rows - 1) * ldb + b_cols, "rhs buffer too small");
    let (rsa, csa) = if a_t { (1, lda as isize) } else { (lda as isize, 1) };
    let (rsb, csb) = if b_t { (1, ldb as isize) } else { (ldb as isize, 1) };
    // SAFETY: the asserts above bound every index reachable with these
    // strides by the slice lengths.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}
