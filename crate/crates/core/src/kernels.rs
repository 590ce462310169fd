//! Dense row-major kernels shared by inference and the gradient tape.

use crate::Scalar;

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
pub fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x (+ b)` with `W` of shape (out, in).
pub fn matvec<F: Scalar>(w: &[F], x: &[F], bias: Option<&[F]>, out: &mut [F]) {
    let n_in = x.len();
    debug_assert_eq!(w.len(), n_in * out.len());
    for (o, y) in out.iter_mut().enumerate() {
        let v = dot(&w[o * n_in..(o + 1) * n_in], x);
        *y = match bias {
            Some(b) => v + b[o],
            None => v,
        };
    }
}

/// `Y = X W^T (+ b)` for `X` of shape (rows, n_in) and `W` of shape (n_out, n_in).
pub fn linear<F: Scalar>(x: &[F], rows: usize, w: &[F], n_out: usize, bias: Option<&[F]>) -> Vec<F> {
    let n_in = x.len() / rows.max(1);
    let mut y = vec![F::zero(); rows * n_out];
    for r in 0..rows {
        matvec(w, &x[r * n_in..(r + 1) * n_in], bias, &mut y[r * n_out..(r + 1) * n_out]);
    }
    y
}
