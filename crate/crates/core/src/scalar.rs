//! Scalar abstraction shared by the numeric kernels.
//!
//! Metric, pyramid and classifier code is written once against [`Scalar`]
//! and instantiated for `f32` and `f64`. Gradient checks and the training
//! loops run in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real floating-point type usable by the numeric kernels.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` constant into `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Row-major dense matrix used everywhere a 2-D signal is needed.
pub type Matrix<T> = ndarray::Array2<T>;

/// Converts every entry of a matrix to another scalar type.
pub fn cast_matrix<S: Scalar, T: Scalar>(m: &Matrix<S>) -> Matrix<T> {
    m.mapv(|v| T::lit(v.to_f64_lossy()))
}

/// Converts a slice of `f64` parameters into `T`.
pub(crate) fn lits<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}
