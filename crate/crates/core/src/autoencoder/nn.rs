//! Convolution, upsampling and activation layers with hand-written backward
//! passes. Tensors are `(channels, rows, cols)`.

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

pub type Tensor = Array3<f64>;

pub const LEAK: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAK * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAK
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// One layer: optional nearest-neighbour x2 upsampling, a zero-padded
/// convolution, then an activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub upsample: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_channels
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Spatial size after this layer, or `None` if it does not fit.
    pub fn output_size(&self, n: usize) -> Option<usize> {
        let n = if self.upsample { 2 * n } else { n };
        let padded = n + 2 * self.pad;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.dim();
    Tensor::from_shape_fn((c, 2 * h, 2 * w), |(k, i, j)| x[[k, i / 2, j / 2]])
}

pub fn upsample2_backward(g: &Tensor) -> Tensor {
    let (c, h, w) = g.dim();
    let mut out = Tensor::zeros((c, h / 2, w / 2));
    for ((k, i, j), v) in g.indexed_iter() {
        out[[k, i / 2, j / 2]] += v;
    }
    out
}

fn output_dims(spec: &LayerSpec, h: usize, w: usize) -> (usize, usize) {
    (
        (h + 2 * spec.pad - spec.kernel) / spec.stride + 1,
        (w + 2 * spec.pad - spec.kernel) / spec.stride + 1,
    )
}

/// Source index in a `h x w` plane for output `(oy, ox)` and tap `(ky, kx)`.
fn source(spec: &LayerSpec, h: usize, w: usize, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
    let iy = (oy * spec.stride + ky).checked_sub(spec.pad)?;
    let ix = (ox * spec.stride + kx).checked_sub(spec.pad)?;
    (iy < h && ix < w).then_some(iy * w + ix)
}

/// `(in * k * k) x (oh * ow)` patch matrix.
fn im2col(spec: &LayerSpec, x: &Tensor) -> Array2<f64> {
    let (ci, h, w) = x.dim();
    let (oh, ow) = output_dims(spec, h, w);
    let k = spec.kernel;
    let xs = x.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((ci * k * k, oh * ow));
    for (r, mut row) in cols.outer_iter_mut().enumerate() {
        let (i, ky, kx) = (r / (k * k), (r / k) % k, r % k);
        let plane = &xs[i * h * w..(i + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                if let Some(src) = source(spec, h, w, oy, ox, ky, kx) {
                    row[oy * ow + ox] = plane[src];
                }
            }
        }
    }
    cols
}

fn col2im(spec: &LayerSpec, cols: &Array2<f64>, shape: (usize, usize, usize)) -> Tensor {
    let (_, h, w) = shape;
    let (oh, ow) = output_dims(spec, h, w);
    let k = spec.kernel;
    let mut x = Tensor::zeros(shape);
    let xs = x.as_slice_mut().expect("standard layout");
    for (r, row) in cols.outer_iter().enumerate() {
        let (i, ky, kx) = (r / (k * k), (r / k) % k, r % k);
        let plane = &mut xs[i * h * w..(i + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                if let Some(src) = source(spec, h, w, oy, ox, ky, kx) {
                    plane[src] += row[oy * ow + ox];
                }
            }
        }
    }
    x
}

fn weight_matrix<'a>(spec: &LayerSpec, weights: &'a [f64]) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((spec.out_channels, spec.fan_in()), weights).expect("weight length")
}

/// Zero-padded strided convolution (cross-correlation).
pub fn conv_forward(spec: &LayerSpec, weights: &[f64], bias: &[f64], x: &Tensor) -> Tensor {
    let (_, h, w) = x.dim();
    let (oh, ow) = output_dims(spec, h, w);
    let mut out = weight_matrix(spec, weights).dot(&im2col(spec, x));
    for (mut row, &b) in out.outer_iter_mut().zip(bias) {
        row += b;
    }
    out.into_shape_with_order((spec.out_channels, oh, ow))
        .expect("output size")
}

/// Given `g = dL/d(conv output)`, accumulates weight and bias gradients and
/// returns `dL/dx`.
pub fn conv_backward(
    spec: &LayerSpec,
    weights: &[f64],
    x: &Tensor,
    g: &Tensor,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Tensor {
    let (co, oh, ow) = g.dim();
    let g2 = g.view().into_shape_with_order((co, oh * ow)).expect("standard layout");
    let cols = im2col(spec, x);
    let gw = g2.dot(&cols.t());
    for (a, b) in grad_w.iter_mut().zip(gw.iter()) {
        *a += b;
    }
    for (a, row) in grad_b.iter_mut().zip(g2.outer_iter()) {
        *a += row.sum();
    }
    let gcols = weight_matrix(spec, weights).t().dot(&g2);
    col2im(spec, &gcols, x.dim())
}
