//! Slice-level numeric kernels shared by [`DenseMatrix`](super::DenseMatrix)
//! and the autodiff tape.

/// Norms below this are treated as zero by [`l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
///
/// `a` is stored `ar x ac`, `b` is stored `br x bc`. With `ta` set the
/// left operand is read as `a^T`, likewise `tb` for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    alpha: f64,
    a: &[f64],
    (ar, ac): (usize, usize),
    ta: bool,
    b: &[f64],
    (br, bc): (usize, usize),
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    debug_assert_eq!(k, k2);
    debug_assert_eq!(a.len(), ar * ac);
    debug_assert_eq!(b.len(), br * bc);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        } else {
            c.iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    // Row-major storage: element (i, j) of `a` lives at i * ac + j.
    let (rsa, csa) = if ta {
        (1, ac as isize)
    } else {
        (ac as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, bc as isize)
    } else {
        (bc as isize, 1)
    };
    // SAFETY: the strides above address exactly the `ar*ac`, `br*bc` and
    // `m*n` elements of the three slices, whose lengths are checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// In-place numerically stable softmax of one row.
pub fn softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// In-place L2 normalisation; rows with norm below [`NORM_EPS`] are left
/// untouched. Returns the norm that was used, or `None` when guarded.
pub fn l2_normalize(row: &mut [f64]) -> Option<f64> {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < NORM_EPS {
        return None;
    }
    for v in row.iter_mut() {
        *v /= norm;
    }
    Some(norm)
}
