//! Dense matrix products on strided ndarray views.

use ndarray::{ArrayView2, ArrayViewMut2};

/// `c = a·b` (or `c += a·b` when `accumulate`), single-threaded.
pub(crate) fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, c: &mut ArrayViewMut2<'_, f64>, accumulate: bool) {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(c.dim(), (m, n), "output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (a_rs, a_cs) = (a.strides()[0], a.strides()[1]);
    let (b_rs, b_cs) = (b.strides()[0], b.strides()[1]);
    let (c_rs, c_cs) = (c.strides()[0], c.strides()[1]);
    // SAFETY: the pointers and strides describe live ndarray views whose
    // shapes were checked above; `c` is uniquely borrowed.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            c_cs,
            c_rs,
            accumulate,
            a.as_ptr(),
            a_cs,
            a_rs,
            b.as_ptr(),
            b_cs,
            b_rs,
            if accumulate { 1.0 } else { 0.0 },
            1.0,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn matches_naive_product_for_transposed_views() {
        let a = Array2::from_shape_fn((5, 7), |(i, j)| (i as f64 - 2.0 * j as f64).sin());
        let b = Array2::from_shape_fn((3, 7), |(i, j)| (i * j) as f64 * 0.1 - 0.4);
        let mut c = Array2::from_elem((5, 3), 1.0);
        matmul(a.view(), b.t(), &mut c.view_mut(), true);
        for i in 0..5 {
            for j in 0..3 {
                let want: f64 = 1.0 + (0..7).map(|k| a[[i, k]] * b[[j, k]]).sum::<f64>();
                assert!((c[[i, j]] - want).abs() < 1e-12);
            }
        }
        let mut d = Array2::from_elem((7, 7), 9.0);
        matmul(a.t(), a.view(), &mut d.view_mut(), false);
        assert!((d[[2, 4]] - (0..5).map(|i| a[[i, 2]] * a[[i, 4]]).sum::<f64>()).abs() < 1e-12);
    }
}
