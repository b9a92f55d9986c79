//! Linear filtering primitives and their adjoints.
//!
//! Every forward operator here has a matching `*_adjoint` that applies its
//! transpose; the metric gradients are assembled from these pairs.

use crate::scalar::{Matrix, Scalar};

/// Mirror index without edge repetition (`-1 -> 1`, `n -> n-2`), periodic
/// with period `2(n-1)` so any offset lands inside `0..n`.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Filters every row with a 1-D kernel (odd length), mirror-padded.
fn filter_rows<T: Scalar>(x: &Matrix<T>, k: &[T]) -> Matrix<T> {
    let (rows, cols) = x.dim();
    let r = (k.len() / 2) as isize;
    let mut out = Matrix::zeros((rows, cols));
    for i in 0..rows {
        let src = x.row(i);
        let mut dst = out.row_mut(i);
        for j in 0..cols {
            let mut acc = T::zero();
            for (t, &w) in k.iter().enumerate() {
                acc = acc + w * src[reflect(j as isize + t as isize - r, cols)];
            }
            dst[j] = acc;
        }
    }
    out
}

fn filter_rows_adjoint<T: Scalar>(g: &Matrix<T>, k: &[T]) -> Matrix<T> {
    let (rows, cols) = g.dim();
    let r = (k.len() / 2) as isize;
    let mut out = Matrix::zeros((rows, cols));
    for i in 0..rows {
        let src = g.row(i);
        let mut dst = out.row_mut(i);
        for j in 0..cols {
            let gj = src[j];
            for (t, &w) in k.iter().enumerate() {
                let idx = reflect(j as isize + t as isize - r, cols);
                dst[idx] = dst[idx] + w * gj;
            }
        }
    }
    out
}

fn filter_cols<T: Scalar>(x: &Matrix<T>, k: &[T]) -> Matrix<T> {
    let (rows, cols) = x.dim();
    let r = (k.len() / 2) as isize;
    let mut out = Matrix::zeros((rows, cols));
    for i in 0..rows {
        for (t, &w) in k.iter().enumerate() {
            let src = x.row(reflect(i as isize + t as isize - r, rows));
            let mut dst = out.row_mut(i);
            for j in 0..cols {
                dst[j] = dst[j] + w * src[j];
            }
        }
    }
    out
}

fn filter_cols_adjoint<T: Scalar>(g: &Matrix<T>, k: &[T]) -> Matrix<T> {
    let (rows, cols) = g.dim();
    let r = (k.len() / 2) as isize;
    let mut out = Matrix::zeros((rows, cols));
    for i in 0..rows {
        let src = g.row(i);
        for (t, &w) in k.iter().enumerate() {
            let idx = reflect(i as isize + t as isize - r, rows);
            let mut dst = out.row_mut(idx);
            for j in 0..cols {
                dst[j] = dst[j] + w * src[j];
            }
        }
    }
    out
}

/// Separable same-size convolution with mirror padding.
pub fn blur<T: Scalar>(x: &Matrix<T>, k: &[T]) -> Matrix<T> {
    filter_cols(&filter_rows(x, k), k)
}

pub fn blur_adjoint<T: Scalar>(g: &Matrix<T>, k: &[T]) -> Matrix<T> {
    filter_rows_adjoint(&filter_cols_adjoint(g, k), k)
}

/// Same-size 2-D correlation with an odd square kernel, mirror-padded.
pub fn conv2<T: Scalar>(x: &Matrix<T>, k: &Matrix<T>) -> Matrix<T> {
    let (rows, cols) = x.dim();
    let (kr, kc) = k.dim();
    let (hr, hc) = ((kr / 2) as isize, (kc / 2) as isize);
    let mut out = Matrix::zeros((rows, cols));
    for i in 0..rows {
        for a in 0..kr {
            let src = x.row(reflect(i as isize + a as isize - hr, rows));
            for b in 0..kc {
                let w = k[[a, b]];
                if w == T::zero() {
                    continue;
                }
                let mut dst = out.row_mut(i);
                for j in 0..cols {
                    dst[j] = dst[j] + w * src[reflect(j as isize + b as isize - hc, cols)];
                }
            }
        }
    }
    out
}

pub fn conv2_adjoint<T: Scalar>(g: &Matrix<T>, k: &Matrix<T>) -> Matrix<T> {
    let (rows, cols) = g.dim();
    let (kr, kc) = k.dim();
    let (hr, hc) = ((kr / 2) as isize, (kc / 2) as isize);
    let mut out = Matrix::zeros((rows, cols));
    for i in 0..rows {
        let src = g.row(i);
        for a in 0..kr {
            let ri = reflect(i as isize + a as isize - hr, rows);
            for b in 0..kc {
                let w = k[[a, b]];
                if w == T::zero() {
                    continue;
                }
                let mut dst = out.row_mut(ri);
                for j in 0..cols {
                    let cj = reflect(j as isize + b as isize - hc, cols);
                    dst[cj] = dst[cj] + w * src[j];
                }
            }
        }
    }
    out
}

/// Separable "valid" correlation: output is `(rows-w+1) x (cols-w+1)`.
pub fn valid_filter<T: Scalar>(x: &Matrix<T>, k: &[T]) -> Matrix<T> {
    let (rows, cols) = x.dim();
    let w = k.len();
    let (orows, ocols) = (rows + 1 - w, cols + 1 - w);
    let mut tmp = Matrix::zeros((rows, ocols));
    for i in 0..rows {
        let src = x.row(i);
        let mut dst = tmp.row_mut(i);
        for j in 0..ocols {
            let mut acc = T::zero();
            for (t, &kv) in k.iter().enumerate() {
                acc = acc + kv * src[j + t];
            }
            dst[j] = acc;
        }
    }
    let mut out = Matrix::zeros((orows, ocols));
    for i in 0..orows {
        for (t, &kv) in k.iter().enumerate() {
            let src = tmp.row(i + t);
            let mut dst = out.row_mut(i);
            for j in 0..ocols {
                dst[j] = dst[j] + kv * src[j];
            }
        }
    }
    out
}

/// Transpose of [`valid_filter`] back onto an input of `shape`.
pub fn valid_filter_adjoint<T: Scalar>(g: &Matrix<T>, k: &[T], shape: (usize, usize)) -> Matrix<T> {
    let (rows, cols) = shape;
    let (orows, ocols) = g.dim();
    let mut tmp = Matrix::zeros((rows, ocols));
    for i in 0..orows {
        let src = g.row(i);
        for (t, &kv) in k.iter().enumerate() {
            let mut dst = tmp.row_mut(i + t);
            for j in 0..ocols {
                dst[j] = dst[j] + kv * src[j];
            }
        }
    }
    let mut out = Matrix::zeros((rows, cols));
    for i in 0..rows {
        let src = tmp.row(i);
        let mut dst = out.row_mut(i);
        for j in 0..ocols {
            let gj = src[j];
            for (t, &kv) in k.iter().enumerate() {
                dst[j + t] = dst[j + t] + kv * gj;
            }
        }
    }
    out
}
