//! Normalized Laplacian pyramid distance.
//!
//! Each input is decomposed into a Laplacian pyramid and every stage is
//! divisively normalized by a local weighted sum of coefficient magnitudes.
//! The distance is the mean over stages of the RMS difference between the
//! normalized stages.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::conv::{conv2, conv2_adjoint};
use crate::metrics::pyramid::{expand_adjoint, laplacian_pyramid, max_depth, reduce_adjoint, Pyramid, GEN_KERNEL};
use crate::scalar::{lits, Matrix, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpdParams {
    /// Requested number of band-pass levels; reduced for small inputs.
    pub depth: usize,
    pub gen_kernel: Vec<f64>,
    /// Odd square kernel, rows outermost. Center entry must be zero.
    pub norm_kernel: Vec<Vec<f64>>,
    pub sigma_dn: f64,
}

impl Default for NlpdParams {
    fn default() -> Self {
        let g = GEN_KERNEL;
        let mut k: Vec<Vec<f64>> = g.iter().map(|a| g.iter().map(|b| a * b).collect()).collect();
        k[2][2] = 0.0;
        let s: f64 = k.iter().flatten().sum();
        for row in &mut k {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Self {
            depth: 5,
            gen_kernel: g.to_vec(),
            norm_kernel: k,
            sigma_dn: 0.17,
        }
    }
}

impl NlpdParams {
    pub fn validate(&self) -> Result<()> {
        let g = &self.gen_kernel;
        if self.depth == 0 {
            return Err(Error::Config("nlpd depth must be >= 1".into()));
        }
        if g.is_empty() || g.len() % 2 == 0 {
            return Err(Error::Config("gen_kernel must have odd length".into()));
        }
        if g.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("gen_kernel entries must be positive".into()));
        }
        if g.iter().zip(g.iter().rev()).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::Config("gen_kernel must be symmetric".into()));
        }
        if (g.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("gen_kernel must sum to 1".into()));
        }
        let n = self.norm_kernel.len();
        if n == 0 || n % 2 == 0 || self.norm_kernel.iter().any(|r| r.len() != n) {
            return Err(Error::Config("norm_kernel must be odd and square".into()));
        }
        if self.norm_kernel.iter().flatten().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Config("norm_kernel entries must be non-negative".into()));
        }
        if self.norm_kernel[n / 2][n / 2] != 0.0 {
            return Err(Error::Config("norm_kernel center entry must be 0".into()));
        }
        if !(self.sigma_dn > 0.0) {
            return Err(Error::Config("sigma_dn must be positive".into()));
        }
        Ok(())
    }

    pub fn gen<T: Scalar>(&self) -> Vec<T> {
        lits(&self.gen_kernel)
    }

    pub fn norm<T: Scalar>(&self) -> Matrix<T> {
        let n = self.norm_kernel.len();
        Array2::from_shape_fn((n, n), |(i, j)| T::lit(self.norm_kernel[i][j]))
    }

    /// Depth actually used for an input of the given shape.
    pub fn effective_depth(&self, rows: usize, cols: usize) -> Result<usize> {
        let feasible = max_depth(rows, cols);
        if feasible == 0 {
            return Err(Error::Input(format!(
                "{rows}x{cols} input is too small for a Laplacian pyramid (need both sides >= 4)"
            )));
        }
        Ok(self.depth.min(feasible))
    }
}

struct Normalized<T> {
    z: Matrix<T>,
    denom: Matrix<T>,
}

fn normalize_stage<T: Scalar>(y: &Matrix<T>, kernel: &Matrix<T>, sigma: T) -> Normalized<T> {
    let denom = conv2(&y.mapv(|v| v.abs()), kernel).mapv(|v| v + sigma);
    let z = ndarray::Zip::from(y).and(&denom).map_collect(|&a, &d| a / d);
    Normalized { z, denom }
}

/// Applies `z = y / (sigma_dn + conv2(|y|, norm_kernel))` to every stage.
pub fn divisive_normalize<T: Scalar>(p: &Pyramid<T>, params: &NlpdParams) -> Pyramid<T> {
    let kernel = params.norm::<T>();
    let sigma = T::lit(params.sigma_dn);
    p.map_stages(|y| normalize_stage(y, &kernel, sigma).z)
}

fn check_shapes<T>(a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Input(format!("shape mismatch: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn normalized_pyramid<T: Scalar>(x: &Matrix<T>, depth: usize, params: &NlpdParams) -> Result<Pyramid<T>> {
    let p = laplacian_pyramid(x, depth, &params.gen::<T>())?;
    Ok(divisive_normalize(&p, params))
}

fn rms_diff<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> T {
    let n = T::from_usize(a.len()).unwrap();
    let ss: T = a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum();
    (ss / n).sqrt()
}

/// Normalized Laplacian pyramid distance between two same-shape matrices.
pub fn nlpd<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, params: &NlpdParams) -> Result<T> {
    check_shapes(a, b)?;
    let (rows, cols) = a.dim();
    let depth = params.effective_depth(rows, cols)?;
    let za = normalized_pyramid(a, depth, params)?;
    let zb = normalized_pyramid(b, depth, params)?;
    let stages = T::from_usize(depth + 1).unwrap();
    let total: T = za.stages().zip(zb.stages()).map(|(x, y)| rms_diff(x, y)).sum();
    Ok(total / stages)
}

/// Gradient of [`nlpd`] with respect to `candidate`.
///
/// A stage whose RMS difference is exactly zero contributes nothing, and the
/// `|y|` term uses subgradient 0 at `y = 0`.
pub fn nlpd_gradient<T: Scalar>(
    reference: &Matrix<T>,
    candidate: &Matrix<T>,
    params: &NlpdParams,
) -> Result<Matrix<T>> {
    check_shapes(reference, candidate)?;
    let (rows, cols) = candidate.dim();
    let depth = params.effective_depth(rows, cols)?;
    let gen = params.gen::<T>();
    let kernel = params.norm::<T>();
    let sigma = T::lit(params.sigma_dn);

    let za = normalized_pyramid(reference, depth, params)?;
    let pb = laplacian_pyramid(candidate, depth, &gen)?;
    let stage_scale = T::one() / T::from_usize(depth + 1).unwrap();

    // Gradient w.r.t. each un-normalized stage of the candidate pyramid.
    let stage_grads: Vec<Matrix<T>> = pb
        .stages()
        .zip(za.stages())
        .map(|(y, za_s)| {
            let Normalized { z, denom } = normalize_stage(y, &kernel, sigma);
            let r = rms_diff(za_s, &z);
            if r == T::zero() {
                return Matrix::zeros(y.dim());
            }
            let n = T::from_usize(y.len()).unwrap();
            // d r / d z_b = (z_b - z_a) / (n r)
            let gz = ndarray::Zip::from(&z)
                .and(za_s)
                .map_collect(|&zb, &za| stage_scale * (zb - za) / (n * r));
            // z = y / D,  D = sigma + K * |y|
            let direct = ndarray::Zip::from(&gz).and(&denom).map_collect(|&g, &d| g / d);
            let gd = ndarray::Zip::from(&gz)
                .and(&z)
                .and(&denom)
                .map_collect(|&g, &zv, &d| -g * zv / d);
            let g_abs = conv2_adjoint(&gd, &kernel);
            ndarray::Zip::from(&direct)
                .and(&g_abs)
                .and(y)
                .map_collect(|&dg, &ga, &yv| {
                    let sign = if yv > T::zero() {
                        T::one()
                    } else if yv < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    dg + ga * sign
                })
        })
        .collect();

    // Back through the (linear) pyramid construction.
    let mut shapes = Vec::with_capacity(depth + 1);
    shapes.push(candidate.dim());
    for b in pb.bands.iter().skip(1) {
        shapes.push(b.dim());
    }
    let mut acc = stage_grads[depth].clone();
    for k in (0..depth).rev() {
        let into_low = &acc - &expand_adjoint(&stage_grads[k], &gen);
        acc = &stage_grads[k] + &reduce_adjoint(&into_low, &gen, shapes[k]);
    }
    Ok(acc)
}
