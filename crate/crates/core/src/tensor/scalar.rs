use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Numeric mode of a computation graph.
///
/// `Standard` is used for training and inference; `Checking` exists so that
/// finite-difference gradient checks can run at tight tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Standard,
    Checking,
}

/// Element type of a [`Tensor`](super::Tensor): `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`. Strides are given in
    /// elements as `(row_stride, col_stride)`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

fn span(rows: usize, cols: usize, strides: (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * strides.0 + (cols - 1) * strides.1 + 1
    }
}

macro_rules! impl_scalar {
    ($t:ty, $mode:expr, $kernel:path) => {
        impl Scalar for $t {
            const PRECISION: Precision = $mode;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                assert!(a.len() >= span(m, k, a_strides), "gemm: lhs too short");
                assert!(b.len() >= span(k, n, b_strides), "gemm: rhs too short");
                assert!(c.len() >= span(m, n, c_strides), "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the three buffers were bounds-checked against the
                // strided extents above, and `c` is uniquely borrowed.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, Precision::Standard, matrixmultiply::sgemm);
impl_scalar!(f64, Precision::Checking, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, (3, 1), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        // transposed lhs through strides
        let mut c2 = [0.0f64; 9];
        f64::gemm(3, 2, 3, 1.0, &a, (1, 3), &a, (3, 1), 0.0, &mut c2, (3, 1));
        assert_eq!(c2[0], 1.0 * 1.0 + 4.0 * 4.0);
        assert_eq!(c2[5], 2.0 * 3.0 + 5.0 * 6.0);
    }
}
