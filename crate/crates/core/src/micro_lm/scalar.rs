use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating point type the model can run in. Training uses `f32`; `f64` is
/// used to take finite differences against the same code path.
pub trait Scalar: Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * op(a) * op(b) + beta * c` with explicit strides.
    ///
    /// # Safety
    /// The pointers must address `m×k`, `k×n` and `m×n` matrices under the
    /// given strides, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f64(v: f64) -> f32 {
        v as f32
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f64(v: f64) -> f64 {
        v
    }
}

/// A row-major matrix view into a slice: `rows x cols` with row stride `ld`.
#[derive(Clone, Copy)]
pub struct Mat<'a, S> {
    pub data: &'a [S],
    pub rows: usize,
    pub cols: usize,
    pub ld: usize,
}

impl<'a, S> Mat<'a, S> {
    pub fn new(data: &'a [S], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, ld: cols }
    }

    pub fn strided(data: &'a [S], rows: usize, cols: usize, ld: usize) -> Self {
        Self { data, rows, cols, ld }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            assert!((self.rows - 1) * self.ld + self.cols <= self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `out = beta * out + op(a) * op(b)` where `op` optionally transposes.
/// `out` is `m x n` row-major with row stride `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(a: Mat<'_, S>, ta: bool, b: Mat<'_, S>, tb: bool, beta: S, out: &mut [S], ldc: usize) {
    a.check();
    b.check();
    let (m, k, rsa, csa) = if ta {
        (a.cols, a.rows, 1isize, a.ld as isize)
    } else {
        (a.rows, a.cols, a.ld as isize, 1isize)
    };
    let (kb, n, rsb, csb) = if tb {
        (b.cols, b.rows, 1isize, b.ld as isize)
    } else {
        (b.rows, b.cols, b.ld as isize, 1isize)
    };
    assert_eq!(k, kb, "inner dimensions differ");
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * ldc + n <= out.len(), "output view out of bounds");
    // SAFETY: every view was bounds-checked above against its slice, and the
    // output slice is exclusively borrowed.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}
