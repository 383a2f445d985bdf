// Strided GEMM on top of matrixmultiply. Transposes are expressed through
// strides, never materialized.

use super::tensor::Tensor;

#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> View<'a> {
    pub fn of(t: &'a Tensor, transposed: bool) -> Self {
        Self::raw(t.data(), t.rows(), t.cols(), transposed)
    }

    pub fn raw(data: &'a [f64], rows: usize, cols: usize, transposed: bool) -> Self {
        if transposed {
            View {
                data,
                rows: cols,
                cols: rows,
                rs: 1,
                cs: cols as isize,
            }
        } else {
            View {
                data,
                rows,
                cols,
                rs: cols as isize,
                cs: 1,
            }
        }
    }

    pub fn t(self) -> Self {
        View {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = a · b + beta · c`, where `c` has strides `c_strides`.
pub(crate) fn gemm(a: View<'_>, b: View<'_>, c: &mut [f64], c_strides: (usize, usize), beta: f64) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // SAFETY: all views cover their full extent: the slice lengths were
    // checked against rows*cols at tensor construction, and the strides
    // describe either the row-major layout or its transpose.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}
