//! Log-mel spectrogram front end, used when only audio is available.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelParams {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub eps_log: f64,
    pub f_min: f64,
    /// Defaults to Nyquist when `None`.
    pub f_max: Option<f64>,
}

impl Default for MelParams {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 2048,
            hop: 512,
            n_mels: 128,
            eps_log: 1e-10,
            f_min: 0.0,
            f_max: None,
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl MelParams {
    fn f_max(&self) -> f64 {
        self.f_max.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    /// Band edges in Hz: `n_mels + 2` points evenly spaced on the mel scale.
    pub fn band_edges(&self) -> Vec<f64> {
        let lo = hz_to_mel(self.f_min);
        let hi = hz_to_mel(self.f_max());
        (0..self.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (self.n_mels + 1) as f64))
            .collect()
    }

    /// Center frequency of mel band `m`.
    pub fn band_center(&self, m: usize) -> f64 {
        self.band_edges()[m + 1]
    }

    /// Triangular filterbank, `n_mels x (n_fft/2 + 1)`, unit peak.
    pub fn filterbank(&self) -> Matrix<f64> {
        let edges = self.band_edges();
        let bins = self.n_fft / 2 + 1;
        let bin_hz = self.sample_rate as f64 / self.n_fft as f64;
        Matrix::from_shape_fn((self.n_mels, bins), |(m, k)| {
            let f = k as f64 * bin_hz;
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let up = (f - l) / (c - l);
            let down = (r - f) / (r - c);
            up.min(down).max(0.0)
        })
    }
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// STFT magnitude -> mel filterbank -> `ln(1 + s / eps_log)`.
///
/// Frame `t` covers samples `[t*hop, t*hop + n_fft)`, zero-padded past the
/// end, giving `ceil(len / hop)` frames.
pub fn compute_mel(waveform: &[f64], params: &MelParams) -> Result<Matrix<f64>> {
    if waveform.is_empty() {
        return Err(Error::Input("empty waveform".into()));
    }
    if waveform.len() < params.n_fft {
        return Err(Error::Input(format!(
            "waveform of {} samples is shorter than one {}-sample window",
            waveform.len(),
            params.n_fft
        )));
    }
    if params.hop == 0 || params.n_mels == 0 {
        return Err(Error::Config("hop and n_mels must be positive".into()));
    }
    let frames = waveform.len().div_ceil(params.hop);
    let bins = params.n_fft / 2 + 1;
    let window = hann(params.n_fft);
    let fb = params.filterbank();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(params.n_fft);
    let mut out = Matrix::zeros((params.n_mels, frames));
    let mut buf = vec![Complex::new(0.0, 0.0); params.n_fft];
    let mut mag = vec![0.0; bins];
    for t in 0..frames {
        let start = t * params.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let s = waveform.get(start + i).copied().unwrap_or(0.0);
            *slot = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, m) in mag.iter_mut().enumerate() {
            *m = buf[k].norm();
        }
        for m in 0..params.n_mels {
            let s: f64 = fb.row(m).iter().zip(&mag).map(|(w, a)| w * a).sum();
            out[[m, t]] = (s / params.eps_log).ln_1p();
        }
    }
    Ok(out)
}
