//! Element-type abstraction for the tensor engine.
//!
//! Production networks run in `f32`. Gradient checks promote the same graphs
//! to `f64`, so the engine is generic over the element type and dispatches
//! dense matrix products to the matching GEMM.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + Sum + 'static
{
    /// General matrix multiply, `C = alpha * A·B + beta * C`, with explicit
    /// row/column strides per operand (row-major callers pass `(cols, 1)`).
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable")
    }

    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

fn max_flat_index(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    // Strides in this crate are nonnegative; extent check for the wrapper.
    assert!(rs >= 0 && cs >= 0, "negative strides unsupported");
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(a.len() >= max_flat_index(m, k, rsa, csa), "gemm: A extent");
                assert!(b.len() >= max_flat_index(k, n, rsb, csb), "gemm: B extent");
                assert!(c.len() >= max_flat_index(m, n, rsc, csc), "gemm: C extent");
                unsafe {
                    $gemm(
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
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// `C[m×n] = A[m×k] · B[k×n] + beta·C`, all row-major.
pub fn mm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm(
        m, k, n,
        T::one(),
        a, k as isize, 1,
        b, n as isize, 1,
        beta,
        c, n as isize, 1,
    );
}

/// `C[m×n] = A[m×k] · B^T + beta·C` where `B` is stored row-major `[n×k]`.
pub fn mm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm(
        m, k, n,
        T::one(),
        a, k as isize, 1,
        b, 1, k as isize,
        beta,
        c, n as isize, 1,
    );
}

/// `C[m×n] = A^T · B + beta·C` where `A` is stored row-major `[k×m]`.
pub fn mm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm(
        m, k, n,
        T::one(),
        a, 1, m as isize,
        b, n as isize, 1,
        beta,
        c, n as isize, 1,
    );
}
