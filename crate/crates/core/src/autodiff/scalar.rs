use std::fmt::Debug;

use num_traits::Float;

/// Element type of tensors: `f64` for verification, `f32` for training.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    const DTYPE: &'static str;
    const BYTES: usize;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = alpha * a * b + beta * c` for an `m x k` by `k x n` product with
    /// arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (isize, isize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE: &'static str = $name;
            const BYTES: usize = std::mem::size_of::<$t>();

            fn of(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, c_strides);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand extent was bounds-checked above and `c`
                // is uniquely borrowed, so no aliasing with `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_with_transposed_operand() {
        // a: 2x3, b^T stored as 2x3 -> b is 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [1.0, 0.0, -1.0, 2.0, 1.0, 0.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, (3, 1), &bt, (1, 3), 0.0, &mut c, (2, 1));
        assert_eq!(c, [-2.0, 4.0, -2.0, 13.0]);
    }
}
