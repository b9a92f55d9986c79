//! Small convolutional autoencoder trained on uniform noise with a
//! perceptual loss, then used frozen as a quantized feature extractor.

mod io;
pub mod nn;

use ndarray::Array3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Spectrogram;
use crate::error::{Error, Result};
use crate::metrics::{distance, metric_gradient, MetricKind, MetricsConfig};
use crate::scalar::Matrix;
use crate::seed::{derive_seed, rng};

pub use io::{decode_params, encode_params, load_params, save_params, PARAMS_MAGIC};
pub use nn::{Activation, LayerSpec, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AEConfig {
    pub patch_size: usize,
    /// Encoder widths; one stride-2 layer per entry.
    pub channel_widths: Vec<usize>,
    /// Kernel of the stride-2 encoder layers (even, padding `(k-2)/2`).
    pub kernel_size: usize,
    pub latent_channels: usize,
    pub quant_levels: u32,
    pub loss: MetricKind,
    pub step_size: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub metrics: MetricsConfig,
    /// Train on all-zero patches instead of noise; a debugging aid.
    pub zero_noise: bool,
}

impl Default for AEConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            channel_widths: vec![8, 16, 32],
            kernel_size: 4,
            latent_channels: 32,
            quant_levels: 32,
            loss: MetricKind::Mse,
            step_size: 1e-3,
            steps: 2000,
            batch: 16,
            seed: 0,
            metrics: MetricsConfig::default(),
            zero_noise: false,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
const DECODER_KERNEL: usize = 3;

impl AEConfig {
    pub fn depth(&self) -> usize {
        self.channel_widths.len()
    }

    pub fn latent_size(&self) -> usize {
        self.patch_size >> self.depth()
    }

    pub fn feature_len(&self) -> usize {
        self.latent_channels * self.latent_size() * self.latent_size()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channel_widths.is_empty() || self.channel_widths.contains(&0) {
            return fail("channel_widths must be non-empty and positive".into());
        }
        let scale = 1usize
            .checked_shl(self.depth() as u32)
            .ok_or_else(|| Error::Config("too many layers".into()))?;
        if self.patch_size == 0 || self.patch_size % scale != 0 {
            return fail(format!(
                "patch_size {} is not divisible by 2^{}",
                self.patch_size,
                self.depth()
            ));
        }
        if self.kernel_size < 2 || self.kernel_size % 2 != 0 {
            return fail(format!("kernel_size {} must be even and >= 2", self.kernel_size));
        }
        if self.latent_channels == 0 {
            return fail("latent_channels must be positive".into());
        }
        if self.quant_levels < 2 {
            return fail(format!("quant_levels {} < 2", self.quant_levels));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return fail(format!("step_size {} must be positive", self.step_size));
        }
        if self.batch == 0 {
            return fail("batch must be positive".into());
        }
        self.metrics.validate()
    }

    /// Encoder layers, the latent projection, then the decoder.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let w = &self.channel_widths;
        let mut layers = Vec::new();
        let mut c = 1;
        for &out in w {
            layers.push(LayerSpec {
                in_channels: c,
                out_channels: out,
                kernel: self.kernel_size,
                stride: 2,
                pad: (self.kernel_size - 2) / 2,
                upsample: false,
                activation: Activation::LeakyRelu,
            });
            c = out;
        }
        let same = |i, o, up, act| LayerSpec {
            in_channels: i,
            out_channels: o,
            kernel: DECODER_KERNEL,
            stride: 1,
            pad: DECODER_KERNEL / 2,
            upsample: up,
            activation: act,
        };
        let top = *w.last().unwrap();
        layers.push(same(top, self.latent_channels, false, Activation::Identity));
        layers.push(same(self.latent_channels, top, false, Activation::LeakyRelu));
        for i in (0..w.len()).rev() {
            let (out, act) = if i == 0 {
                (1, Activation::Sigmoid)
            } else {
                (w[i - 1], Activation::LeakyRelu)
            };
            layers.push(same(w[i], out, true, act));
        }
        layers
    }

    /// Number of leading layers that produce the latent.
    pub fn encoder_layers(&self) -> usize {
        self.depth() + 1
    }
}

/// Network weights plus optimizer state.
///
/// Parameters live in one flat vector; layer `l` stores its weights as
/// `[out][in][ky][kx]` followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct AEParams {
    pub config: AEConfig,
    pub layers: Vec<LayerSpec>,
    pub theta: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_t: u64,
    /// Running min/max of latents over the final tenth of training.
    pub latent_range: Option<(f64, f64)>,
}

impl AEParams {
    pub fn zeros(config: &AEConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_specs();
        let n = layers.iter().map(|l| l.param_len()).sum();
        Ok(Self {
            config: config.clone(),
            layers,
            theta: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            adam_t: 0,
            latent_range: None,
        })
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.layers.len() + 1);
        let mut acc = 0;
        off.push(0);
        for l in &self.layers {
            acc += l.param_len();
            off.push(acc);
        }
        off
    }

    /// `(weights, bias)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off = self.offsets();
        let p = &self.theta[off[l]..off[l + 1]];
        p.split_at(self.layers[l].weight_len())
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }
}

/// Seeded uniform `±sqrt(6 / fan_in)` kernels, zero biases.
pub fn ae_init(config: &AEConfig) -> Result<AEParams> {
    let mut p = AEParams::zeros(config)?;
    let mut r = rng(derive_seed(config.seed, "autoencoder/init"));
    let off = p.offsets();
    for (l, spec) in p.layers.iter().enumerate() {
        let bound = (6.0 / spec.fan_in() as f64).sqrt();
        for v in &mut p.theta[off[l]..off[l] + spec.weight_len()] {
            *v = r.gen_range(-bound..=bound);
        }
    }
    Ok(p)
}

struct Trace {
    /// Input to each convolution (after any upsampling).
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    out: Vec<Tensor>,
}

fn run_layers(params: &AEParams, x: Tensor, layers: std::ops::Range<usize>, keep: bool) -> (Tensor, Option<Trace>) {
    let mut trace = keep.then(|| Trace {
        inputs: Vec::new(),
        pre: Vec::new(),
        out: Vec::new(),
    });
    let mut cur = x;
    for l in layers {
        let spec = &params.layers[l];
        let input = if spec.upsample { nn::upsample2(&cur) } else { cur };
        let (w, b) = params.layer(l);
        let pre = nn::conv_forward(spec, w, b, &input);
        let out = pre.mapv(|v| spec.activation.apply(v));
        if let Some(t) = trace.as_mut() {
            t.inputs.push(input);
            t.pre.push(pre);
            t.out.push(out.clone());
        }
        cur = out;
    }
    (cur, trace)
}

fn check_patch(params: &AEParams, patch: &Matrix<f64>) -> Result<()> {
    let p = params.config.patch_size;
    if patch.dim() != (p, p) {
        return Err(Error::Input(format!(
            "patch is {}x{}, expected {p}x{p}",
            patch.nrows(),
            patch.ncols()
        )));
    }
    Ok(())
}

fn as_tensor(patch: &Matrix<f64>) -> Tensor {
    let (h, w) = patch.dim();
    patch.to_owned().into_shape_with_order((1, h, w)).expect("same size")
}

fn as_matrix(t: Tensor) -> Matrix<f64> {
    let (_, h, w) = t.dim();
    t.into_shape_with_order((h, w)).expect("single channel")
}

/// Latent tensor of one patch, before quantization.
pub fn ae_encode(params: &AEParams, patch: &Matrix<f64>) -> Result<Tensor> {
    check_patch(params, patch)?;
    let enc = params.config.encoder_layers();
    Ok(run_layers(params, as_tensor(patch), 0..enc, false).0)
}

/// Reconstruction and latent of one patch.
pub fn ae_forward(params: &AEParams, patch: &Matrix<f64>) -> Result<(Matrix<f64>, Tensor)> {
    let latent = ae_encode(params, patch)?;
    let enc = params.config.encoder_layers();
    let (recon, _) = run_layers(params, latent.clone(), enc..params.layers.len(), false);
    Ok((as_matrix(recon), latent))
}

/// Loss of one patch and its gradient with respect to every parameter.
/// Also returns the latent extremes.
pub fn sample_loss_and_grad(params: &AEParams, patch: &Matrix<f64>) -> Result<(f64, Vec<f64>, (f64, f64))> {
    check_patch(params, patch)?;
    let cfg = &params.config;
    let (recon, trace) = run_layers(params, as_tensor(patch), 0..params.layers.len(), true);
    let trace = trace.expect("kept");
    let latent = &trace.out[cfg.encoder_layers() - 1];
    let extremes = latent.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let recon = as_matrix(recon);
    let loss = distance(cfg.loss, patch, &recon, &cfg.metrics)?;
    let mut g = as_tensor(&metric_gradient(cfg.loss, patch, &recon, &cfg.metrics)?);
    let off = params.offsets();
    let mut grad = vec![0.0; params.theta.len()];
    for l in (0..params.layers.len()).rev() {
        let spec = &params.layers[l];
        let dpre = ndarray::Zip::from(&g)
            .and(&trace.pre[l])
            .and(&trace.out[l])
            .map_collect(|&gv, &x, &y| gv * spec.activation.derivative(x, y));
        let (w, _) = params.layer(l);
        let (gw, gb) = grad[off[l]..off[l + 1]].split_at_mut(spec.weight_len());
        let gx = nn::conv_backward(spec, w, &trace.inputs[l], &dpre, gw, gb);
        g = if spec.upsample { nn::upsample2_backward(&gx) } else { gx };
    }
    Ok((loss, grad, extremes))
}

/// Mean loss and gradient over a batch. Samples run in parallel; their
/// gradients are summed in batch order so the result does not depend on the
/// thread count.
pub fn batch_loss_and_grad(params: &AEParams, batch: &[Matrix<f64>]) -> Result<(f64, Vec<f64>, (f64, f64))> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let parts: Vec<_> = batch
        .par_iter()
        .map(|p| sample_loss_and_grad(params, p))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.theta.len()];
    let mut ext = (f64::INFINITY, f64::NEG_INFINITY);
    for (l, g, (lo, hi)) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        ext = (ext.0.min(lo), ext.1.max(hi));
    }
    grad.iter_mut().for_each(|v| *v /= n);
    Ok((loss / n, grad, ext))
}

fn adam_step(p: &mut AEParams, grad: &[f64], lr: f64) {
    p.adam_t += 1;
    let t = p.adam_t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..p.theta.len() {
        let g = grad[i];
        p.adam_m[i] = ADAM_BETA1 * p.adam_m[i] + (1.0 - ADAM_BETA1) * g;
        p.adam_v[i] = ADAM_BETA2 * p.adam_v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mh = p.adam_m[i] / c1;
        let vh = p.adam_v[i] / c2;
        p.theta[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
}

/// Trains on seeded noise batches; returns the parameters and the per-step
/// batch loss.
pub fn ae_train(config: &AEConfig) -> Result<(AEParams, Vec<f64>)> {
    let mut params = ae_init(config)?;
    let mut noise = rng(derive_seed(config.seed, "autoencoder/noise"));
    let p = config.patch_size;
    let tail_from = config.steps - config.steps.div_ceil(10);
    let mut curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch: Vec<Matrix<f64>> = (0..config.batch)
            .map(|_| {
                if config.zero_noise {
                    Matrix::zeros((p, p))
                } else {
                    Matrix::from_shape_simple_fn((p, p), || noise.gen::<f64>())
                }
            })
            .collect();
        let (loss, grad, (lo, hi)) = batch_loss_and_grad(&params, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        curve.push(loss);
        if step >= tail_from {
            params.latent_range = Some(match params.latent_range {
                None => (lo, hi),
                Some((a, b)) => (a.min(lo), b.max(hi)),
            });
        }
        adam_step(&mut params, &grad, config.step_size);
        if !params.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        if config.steps >= 10 && (step + 1) % (config.steps / 10) == 0 {
            log::info!(
                "{} autoencoder: step {}/{} loss {loss:.6}",
                config.loss,
                step + 1,
                config.steps
            );
        }
    }
    Ok((params, curve))
}

/// Affine map of `[lo, hi]` onto `0..levels`, rounding half up and clamping.
pub fn quantize_latent(latent: &Tensor, range: (f64, f64), levels: u32) -> Result<Array3<u32>> {
    let (lo, hi) = range;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("degenerate latent range [{lo}, {hi}]")));
    }
    if levels < 2 {
        return Err(Error::Config(format!("quant_levels {levels} < 2")));
    }
    let top = (levels - 1) as f64;
    Ok(latent.mapv(|v| {
        let q = ((v - lo) / (hi - lo) * top + 0.5).floor();
        q.clamp(0.0, top) as u32
    }))
}

pub fn dequantize_latent(code: &Array3<u32>, range: (f64, f64), levels: u32) -> Tensor {
    let (lo, hi) = range;
    let top = (levels - 1) as f64;
    code.mapv(|q| lo + q as f64 / top * (hi - lo))
}

/// Tiles the spectrogram into zero-padded patches, encodes and quantizes
/// each, and averages the codes rescaled to `[0, 1]`.
pub fn extract_features(params: &AEParams, spec: &Spectrogram<f64>) -> Result<Vec<f64>> {
    let cfg = &params.config;
    let range = params
        .latent_range
        .ok_or_else(|| Error::Config("autoencoder has no latent range; train it first".into()))?;
    let p = cfg.patch_size;
    let (rows, cols) = spec.data.dim();
    if rows < p {
        return Err(Error::Input(format!(
            "{}: {rows} mel bands is smaller than one {p}-row patch",
            spec.id
        )));
    }
    let top = (cfg.quant_levels - 1) as f64;
    let mut acc = vec![0.0; cfg.feature_len()];
    let (tr, tc) = (rows.div_ceil(p), cols.div_ceil(p));
    for i in 0..tr {
        for j in 0..tc {
            let patch = Matrix::from_shape_fn((p, p), |(r, c)| {
                spec.data.get((i * p + r, j * p + c)).copied().unwrap_or(0.0)
            });
            let code = quantize_latent(&ae_encode(params, &patch)?, range, cfg.quant_levels)?;
            for (a, &q) in acc.iter_mut().zip(code.iter()) {
                *a += q as f64 / top;
            }
        }
    }
    let n = (tr * tc) as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(acc)
}
