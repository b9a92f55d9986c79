//! Spectrogram distances: MSE, 1 - MS-SSIM and NLPD, with gradients.

pub mod conv;
pub mod nlpd;
pub mod pyramid;
pub mod ssim;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Matrix, Scalar};

pub use nlpd::{divisive_normalize, nlpd, nlpd_gradient, NlpdParams};
pub use pyramid::{collapse, laplacian_pyramid, max_depth, Pyramid, GEN_KERNEL};
pub use ssim::{ms_ssim, ms_ssim_gradient, ssim, SsimParams, MS_SSIM_WEIGHTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mse,
    #[serde(rename = "msssim")]
    OneMinusMsSsim,
    Nlpd,
}

impl MetricKind {
    /// Canonical order: MSE, 1 - MS-SSIM, NLPD.
    pub const ALL: [MetricKind; 3] = [MetricKind::Mse, MetricKind::OneMinusMsSsim, MetricKind::Nlpd];

    /// Short name used on the command line and in file names.
    pub fn slug(self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::OneMinusMsSsim => "msssim",
            MetricKind::Nlpd => "nlpd",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            MetricKind::Mse => 0,
            MetricKind::OneMinusMsSsim => 1,
            MetricKind::Nlpd => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Mse => "MSE",
            MetricKind::OneMinusMsSsim => "1-MS-SSIM",
            MetricKind::Nlpd => "NLPD",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(MetricKind::Mse),
            "msssim" | "ms-ssim" | "1-ms-ssim" => Ok(MetricKind::OneMinusMsSsim),
            "nlpd" => Ok(MetricKind::Nlpd),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

/// Parameter block for all metrics; serialized as `metrics.ssim.*` and
/// `metrics.nlpd.*` in experiment outputs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub ssim: SsimParams,
    pub nlpd: NlpdParams,
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        self.ssim.validate()?;
        self.nlpd.validate()
    }
}

fn same_shape<T>(a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Input(format!("shape mismatch: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mean squared difference.
pub fn mse<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    same_shape(a, b)?;
    if a.is_empty() {
        return Err(Error::Input("mse of empty matrices".into()));
    }
    let n = T::from_usize(a.len()).unwrap();
    let ss: T = a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum();
    Ok(ss / n)
}

/// Distance of the given kind; zero for identical inputs.
pub fn distance<T: Scalar>(kind: MetricKind, a: &Matrix<T>, b: &Matrix<T>, cfg: &MetricsConfig) -> Result<T> {
    same_shape(a, b)?;
    match kind {
        MetricKind::Mse => mse(a, b),
        MetricKind::OneMinusMsSsim => Ok(T::one() - ms_ssim(a, b, &cfg.ssim)?),
        MetricKind::Nlpd => nlpd(a, b, &cfg.nlpd),
    }
}

/// Gradient of `distance(kind, reference, candidate)` with respect to
/// `candidate`.
pub fn metric_gradient<T: Scalar>(
    kind: MetricKind,
    reference: &Matrix<T>,
    candidate: &Matrix<T>,
    cfg: &MetricsConfig,
) -> Result<Matrix<T>> {
    same_shape(reference, candidate)?;
    match kind {
        MetricKind::Mse => {
            let scale = T::lit(2.0) / T::from_usize(candidate.len()).unwrap();
            Ok(ndarray::Zip::from(candidate)
                .and(reference)
                .map_collect(|&c, &r| scale * (c - r)))
        }
        MetricKind::OneMinusMsSsim => Ok(ms_ssim_gradient(reference, candidate, &cfg.ssim)?.mapv(|v| -v)),
        MetricKind::Nlpd => nlpd_gradient(reference, candidate, &cfg.nlpd),
    }
}
