//! Laplacian pyramid decomposition and reconstruction.
//!
//! Level `k+1` of the Gaussian chain is `downsample(blur(x_k))`; band `k` is
//! `x_k - expand(x_{k+1})` where `expand` zero-inserts back to the recorded
//! shape of `x_k` and blurs with twice the generating kernel. Odd sizes
//! halve to `ceil(n / 2)`, so reconstruction is exact up to rounding.

use crate::error::{Error, Result};
use crate::metrics::conv::{blur, blur_adjoint};
use crate::scalar::{Matrix, Scalar};

/// Burt-Adelson generating kernel used by default.
pub const GEN_KERNEL: [f64; 5] = [0.05, 0.25, 0.40, 0.25, 0.05];

/// Smallest side length allowed for the finest-to-last band.
const MIN_BAND_SIDE: usize = 4;

/// Band-pass coefficients (finest first) plus the low-pass residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid<T> {
    pub bands: Vec<Matrix<T>>,
    pub residual: Matrix<T>,
}

impl<T: Scalar> Pyramid<T> {
    pub fn depth(&self) -> usize {
        self.bands.len()
    }

    /// All stages in order: bands then residual.
    pub fn stages(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.bands.iter().chain(std::iter::once(&self.residual))
    }

    pub fn map_stages(&self, mut f: impl FnMut(&Matrix<T>) -> Matrix<T>) -> Pyramid<T> {
        Pyramid {
            bands: self.bands.iter().map(&mut f).collect(),
            residual: f(&self.residual),
        }
    }
}

/// Largest depth for which the last band keeps both sides >= 4.
pub fn max_depth(rows: usize, cols: usize) -> usize {
    let side = rows.min(cols);
    let mut depth = 0;
    while side >= MIN_BAND_SIDE << depth {
        depth += 1;
    }
    depth
}

pub(crate) fn half(n: usize) -> usize {
    n.div_ceil(2)
}

/// Keeps even-indexed rows and columns.
pub fn downsample<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let (r, c) = x.dim();
    Matrix::from_shape_fn((half(r), half(c)), |(i, j)| x[[2 * i, 2 * j]])
}

/// Zero-inserting upsample onto `shape`; `x` lands on even indices.
pub fn upsample<T: Scalar>(x: &Matrix<T>, shape: (usize, usize)) -> Matrix<T> {
    let mut out = Matrix::zeros(shape);
    for ((i, j), &v) in x.indexed_iter() {
        out[[2 * i, 2 * j]] = v;
    }
    out
}

fn doubled<T: Scalar>(kernel: &[T]) -> Vec<T> {
    kernel.iter().map(|&w| w + w).collect()
}

pub(crate) fn reduce<T: Scalar>(x: &Matrix<T>, kernel: &[T]) -> Matrix<T> {
    downsample(&blur(x, kernel))
}

pub(crate) fn reduce_adjoint<T: Scalar>(g: &Matrix<T>, kernel: &[T], shape: (usize, usize)) -> Matrix<T> {
    blur_adjoint(&upsample(g, shape), kernel)
}

pub(crate) fn expand<T: Scalar>(x: &Matrix<T>, shape: (usize, usize), kernel: &[T]) -> Matrix<T> {
    blur(&upsample(x, shape), &doubled(kernel))
}

pub(crate) fn expand_adjoint<T: Scalar>(g: &Matrix<T>, kernel: &[T]) -> Matrix<T> {
    downsample(&blur_adjoint(g, &doubled(kernel)))
}

/// Decomposes `x` into `depth` band-pass levels and a residual.
pub fn laplacian_pyramid<T: Scalar>(x: &Matrix<T>, depth: usize, gen_kernel: &[T]) -> Result<Pyramid<T>> {
    let (rows, cols) = x.dim();
    let feasible = max_depth(rows, cols);
    if depth == 0 || depth > feasible {
        return Err(Error::Config(format!(
            "pyramid depth {depth} infeasible for {rows}x{cols} input; max feasible depth is {feasible}"
        )));
    }
    let mut bands = Vec::with_capacity(depth);
    let mut current = x.clone();
    for _ in 0..depth {
        let low = reduce(&current, gen_kernel);
        let band = &current - &expand(&low, current.dim(), gen_kernel);
        bands.push(band);
        current = low;
    }
    Ok(Pyramid {
        bands,
        residual: current,
    })
}

/// Inverts [`laplacian_pyramid`].
pub fn collapse<T: Scalar>(p: &Pyramid<T>, gen_kernel: &[T]) -> Result<Matrix<T>> {
    if p.bands.is_empty() {
        return Err(Error::Input("pyramid has no bands".into()));
    }
    let mut below = p.residual.dim();
    for (k, band) in p.bands.iter().enumerate().rev() {
        let (r, c) = band.dim();
        if (half(r), half(c)) != below {
            return Err(Error::Input(format!(
                "pyramid level {k} has shape {r}x{c} inconsistent with the level below ({}x{})",
                below.0, below.1
            )));
        }
        below = (r, c);
    }
    let mut current = p.residual.clone();
    for band in p.bands.iter().rev() {
        current = band + &expand(&current, band.dim(), gen_kernel);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::lits;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn kernel() -> Vec<f64> {
        lits(&GEN_KERNEL)
    }

    #[test]
    fn depth_limits() {
        assert_eq!(max_depth(64, 64), 5);
        assert_eq!(max_depth(16, 16), 3);
        assert_eq!(max_depth(3, 100), 0);
        assert_eq!(max_depth(128, 1290), 6);
        let x = Array2::<f64>::zeros((16, 16));
        let err = laplacian_pyramid(&x, 4, &kernel()).unwrap_err();
        assert!(err.to_string().contains("max feasible depth is 3"));
    }

    #[test]
    fn band_shapes_for_64() {
        let x = Array2::<f64>::zeros((64, 64));
        let p = laplacian_pyramid(&x, 4, &kernel()).unwrap();
        let shapes: Vec<_> = p.bands.iter().map(|b| b.dim()).collect();
        assert_eq!(shapes, vec![(64, 64), (32, 32), (16, 16), (8, 8)]);
        assert_eq!(p.residual.dim(), (4, 4));
    }

    #[test]
    fn odd_shapes_halve_up() {
        let x = Array2::<f64>::ones((13, 9));
        let p = laplacian_pyramid(&x, 2, &kernel()).unwrap();
        assert_eq!(p.bands[1].dim(), (7, 5));
        assert_eq!(p.residual.dim(), (4, 3));
    }

    #[test]
    fn constant_input_has_empty_bands() {
        let x = Array2::from_elem((32, 24), 0.37);
        let p = laplacian_pyramid(&x, 3, &kernel()).unwrap();
        for b in &p.bands {
            assert!(b.iter().all(|v| v.abs() <= 1e-9));
        }
        assert!(p.residual.iter().all(|v| (v - 0.37).abs() <= 1e-9));
    }

    #[test]
    fn collapse_reconstructs_random_input() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((32, 32), |_| r.gen::<f64>());
        let p = laplacian_pyramid(&x, 3, &kernel()).unwrap();
        let y = collapse(&p, &kernel()).unwrap();
        let err = (&y - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-6);
    }

    #[test]
    fn collapse_of_residual_only_is_repeated_expand() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let res = Array2::from_shape_fn((4, 4), |_| r.gen::<f64>());
        let p = Pyramid {
            bands: vec![Array2::zeros((16, 16)), Array2::zeros((8, 8))],
            residual: res.clone(),
        };
        let y = collapse(&p, &kernel()).unwrap();
        let k = kernel();
        let expected = expand(&expand(&res, (8, 8), &k), (16, 16), &k);
        assert_eq!(y, expected);
    }

    #[test]
    fn collapse_rejects_inconsistent_levels() {
        let p = Pyramid {
            bands: vec![Array2::<f64>::zeros((16, 16))],
            residual: Array2::zeros((5, 8)),
        };
        assert!(matches!(collapse(&p, &kernel()), Err(Error::Input(_))));
    }

    #[test]
    fn works_in_single_precision() {
        let x = Array2::from_shape_fn((16, 20), |(i, j)| ((i * 7 + j * 3) % 11) as f32 / 10.0);
        let k: Vec<f32> = lits(&GEN_KERNEL);
        let p = laplacian_pyramid(&x, 2, &k).unwrap();
        let y = collapse(&p, &k).unwrap();
        let err = (&y - &x).iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(err < 1e-5);
    }
}
