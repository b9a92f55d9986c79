//! Structural similarity, single- and multi-scale.
//!
//! Local statistics use a Gaussian window evaluated at valid positions only.
//! Multi-scale pooling is a 2x2 mean with stride 2 (trailing odd row/column
//! dropped). The coarsest scale contributes the full luminance x
//! contrast-structure index, every finer scale contributes only the
//! contrast-structure term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::conv::{valid_filter, valid_filter_adjoint};
use crate::scalar::{Matrix, Scalar};

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    /// One weight per scale, finest first.
    pub scale_weights: Vec<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            scale_weights: MS_SSIM_WEIGHTS.to_vec(),
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(Error::Config(format!(
                "ssim window_size must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        for (name, v) in [
            ("window_sigma", self.window_sigma),
            ("k1", self.k1),
            ("k2", self.k2),
            ("dynamic_range", self.dynamic_range),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("ssim {name} must be positive")));
            }
        }
        if self.scale_weights.is_empty() || self.scale_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("ssim scale_weights must be positive".into()));
        }
        if (self.scale_weights.iter().sum::<f64>() - 1.0).abs() > 1e-3 {
            return Err(Error::Config("ssim scale_weights must sum to 1".into()));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian; the 2-D window is its outer product.
    pub fn window<T: Scalar>(&self) -> Vec<T> {
        let r = (self.window_size / 2) as f64;
        let raw: Vec<f64> = (0..self.window_size)
            .map(|i| {
                let d = i as f64 - r;
                (-(d * d) / (2.0 * self.window_sigma * self.window_sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| T::lit(v / s)).collect()
    }

    fn constants<T: Scalar>(&self) -> (T, T) {
        let c1 = (self.k1 * self.dynamic_range).powi(2);
        let c2 = (self.k2 * self.dynamic_range).powi(2);
        (T::lit(c1), T::lit(c2))
    }

    /// Scales usable for a `rows x cols` input, capped by the weight count.
    pub fn usable_scales(&self, rows: usize, cols: usize) -> usize {
        let (mut r, mut c) = (rows, cols);
        let mut n = 0;
        while n < self.scale_weights.len() && r >= self.window_size && c >= self.window_size {
            n += 1;
            r /= 2;
            c /= 2;
        }
        n
    }

    /// Leading weights renormalized to sum to one.
    pub fn effective_weights(&self, scales: usize) -> Vec<f64> {
        let w = &self.scale_weights[..scales];
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }
}

/// Local Gaussian-weighted statistics over the valid window positions.
struct LocalStats<T> {
    mu_x: Matrix<T>,
    mu_y: Matrix<T>,
    sxx: Matrix<T>,
    syy: Matrix<T>,
    sxy: Matrix<T>,
}

fn local_stats<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>, win: &[T]) -> LocalStats<T> {
    let mu_x = valid_filter(x, win);
    let mu_y = valid_filter(y, win);
    let exx = valid_filter(&(x * x), win);
    let eyy = valid_filter(&(y * y), win);
    let exy = valid_filter(&(x * y), win);
    let sxx = &exx - &(&mu_x * &mu_x);
    let syy = &eyy - &(&mu_y * &mu_y);
    let sxy = &exy - &(&mu_x * &mu_y);
    LocalStats {
        mu_x,
        mu_y,
        sxx,
        syy,
        sxy,
    }
}

fn luminance<T: Scalar>(mx: T, my: T, c1: T) -> T {
    (T::lit(2.0) * mx * my + c1) / (mx * mx + my * my + c1)
}

fn contrast_structure<T: Scalar>(sxx: T, syy: T, sxy: T, c2: T) -> T {
    (T::lit(2.0) * sxy + c2) / (sxx + syy + c2)
}

/// Mean of the local contrast-structure map, and optionally of the full
/// luminance x contrast-structure map.
fn scale_term<T: Scalar>(s: &LocalStats<T>, c1: T, c2: T, with_luminance: bool) -> T {
    let n = T::from_usize(s.mu_x.len()).unwrap();
    let total: T = ndarray::Zip::from(&s.mu_x)
        .and(&s.mu_y)
        .and(&s.sxx)
        .and(&s.syy)
        .and(&s.sxy)
        .fold(T::zero(), |acc, &mx, &my, &xx, &yy, &xy| {
            let cs = contrast_structure(xx, yy, xy, c2);
            let v = if with_luminance { luminance(mx, my, c1) * cs } else { cs };
            acc + v
        });
    total / n
}

/// Gradient of [`scale_term`] with respect to `y`.
fn scale_term_grad<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    s: &LocalStats<T>,
    win: &[T],
    c1: T,
    c2: T,
    with_luminance: bool,
) -> Matrix<T> {
    let two = T::lit(2.0);
    let inv_n = T::one() / T::from_usize(s.mu_x.len()).unwrap();
    let shape = s.mu_x.dim();
    let mut g_mu = Matrix::zeros(shape);
    let mut g_eyy = Matrix::zeros(shape);
    let mut g_exy = Matrix::zeros(shape);
    for idx in 0..s.mu_x.len() {
        let p = (idx / shape.1, idx % shape.1);
        let (mx, my) = (s.mu_x[p], s.mu_y[p]);
        let a2 = two * s.sxy[p] + c2;
        let b2 = s.sxx[p] + s.syy[p] + c2;
        let cs = a2 / b2;
        let (g_l, g_cs) = if with_luminance {
            (inv_n * cs, inv_n * luminance(mx, my, c1))
        } else {
            (T::zero(), inv_n)
        };
        let d_sxy = g_cs * two / b2;
        let d_syy = -g_cs * a2 / (b2 * b2);
        let mut d_my = -d_sxy * mx - d_syy * two * my;
        if with_luminance {
            let a1 = two * mx * my + c1;
            let b1 = mx * mx + my * my + c1;
            d_my = d_my + g_l * (two * mx / b1 - a1 * two * my / (b1 * b1));
        }
        g_mu[p] = d_my;
        g_eyy[p] = d_syy;
        g_exy[p] = d_sxy;
    }
    let dim = y.dim();
    let from_mu = valid_filter_adjoint(&g_mu, win, dim);
    let from_eyy = valid_filter_adjoint(&g_eyy, win, dim);
    let from_exy = valid_filter_adjoint(&g_exy, win, dim);
    ndarray::Zip::from(&from_mu)
        .and(&from_eyy)
        .and(&from_exy)
        .and(x)
        .and(y)
        .map_collect(|&m, &e, &c, &xv, &yv| m + two * yv * e + xv * c)
}

fn check_inputs<T>(a: &Matrix<T>, b: &Matrix<T>, p: &SsimParams) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Input(format!("shape mismatch: {:?} vs {:?}", a.dim(), b.dim())));
    }
    let (r, c) = a.dim();
    if r < p.window_size || c < p.window_size {
        return Err(Error::Input(format!(
            "{r}x{c} input is smaller than the {0}x{0} ssim window",
            p.window_size
        )));
    }
    Ok(())
}

/// Mean SSIM index over all valid window positions.
pub fn ssim<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, p: &SsimParams) -> Result<T> {
    check_inputs(a, b, p)?;
    let (c1, c2) = p.constants::<T>();
    let stats = local_stats(a, b, &p.window::<T>());
    Ok(scale_term(&stats, c1, c2, true))
}

/// 2x2 mean pooling with stride 2.
pub fn mean_pool<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let (r, c) = x.dim();
    let q = T::lit(0.25);
    Matrix::from_shape_fn((r / 2, c / 2), |(i, j)| {
        q * (x[[2 * i, 2 * j]] + x[[2 * i, 2 * j + 1]] + x[[2 * i + 1, 2 * j]] + x[[2 * i + 1, 2 * j + 1]])
    })
}

fn mean_pool_adjoint<T: Scalar>(g: &Matrix<T>, shape: (usize, usize)) -> Matrix<T> {
    let q = T::lit(0.25);
    let mut out = Matrix::zeros(shape);
    for ((i, j), &v) in g.indexed_iter() {
        for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            out[[2 * i + di, 2 * j + dj]] = q * v;
        }
    }
    out
}

struct MsForward<T> {
    xs: Vec<Matrix<T>>,
    ys: Vec<Matrix<T>>,
    stats: Vec<LocalStats<T>>,
    /// Unclamped per-scale terms.
    terms: Vec<T>,
    weights: Vec<T>,
}

fn ms_forward<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, p: &SsimParams) -> Result<MsForward<T>> {
    check_inputs(a, b, p)?;
    let (rows, cols) = a.dim();
    let scales = p.usable_scales(rows, cols);
    let weights: Vec<T> = p.effective_weights(scales).into_iter().map(T::lit).collect();
    let (c1, c2) = p.constants::<T>();
    let win = p.window::<T>();
    let mut xs = vec![a.clone()];
    let mut ys = vec![b.clone()];
    for s in 1..scales {
        xs.push(mean_pool(&xs[s - 1]));
        ys.push(mean_pool(&ys[s - 1]));
    }
    let stats: Vec<_> = xs.iter().zip(&ys).map(|(x, y)| local_stats(x, y, &win)).collect();
    let terms = stats
        .iter()
        .enumerate()
        .map(|(s, st)| scale_term(st, c1, c2, s + 1 == scales))
        .collect();
    Ok(MsForward {
        xs,
        ys,
        stats,
        terms,
        weights,
    })
}

fn ms_value<T: Scalar>(f: &MsForward<T>) -> T {
    let v = f
        .terms
        .iter()
        .zip(&f.weights)
        .fold(T::one(), |acc, (&t, &w)| acc * t.max(T::zero()).powf(w));
    v.max(T::zero()).min(T::one())
}

/// Multi-scale SSIM, clamped to `[0, 1]`.
///
/// Scales whose images would be smaller than the window are dropped and the
/// remaining weights renormalized.
pub fn ms_ssim<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, p: &SsimParams) -> Result<T> {
    Ok(ms_value(&ms_forward(a, b, p)?))
}

/// Gradient of [`ms_ssim`] with respect to `candidate` (the second input).
///
/// Zero wherever a clamped scale term makes the product vanish.
pub fn ms_ssim_gradient<T: Scalar>(reference: &Matrix<T>, candidate: &Matrix<T>, p: &SsimParams) -> Result<Matrix<T>> {
    let f = ms_forward(reference, candidate, p)?;
    let value = ms_value(&f);
    if value <= T::zero() || f.terms.iter().any(|&t| t <= T::zero()) {
        return Ok(Matrix::zeros(candidate.dim()));
    }
    let (c1, c2) = p.constants::<T>();
    let win = p.window::<T>();
    let scales = f.terms.len();
    let mut acc: Option<Matrix<T>> = None;
    for s in (0..scales).rev() {
        let coeff = f.weights[s] * value / f.terms[s];
        let local = scale_term_grad(&f.xs[s], &f.ys[s], &f.stats[s], &win, c1, c2, s + 1 == scales).mapv(|v| v * coeff);
        let g = match acc.take() {
            Some(coarser) => &local + &mean_pool_adjoint(&coarser, f.ys[s].dim()),
            None => local,
        };
        acc = Some(g);
    }
    Ok(acc.expect("at least one scale"))
}
