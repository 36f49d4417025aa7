//! Floating-point scalar abstraction shared by every estimator.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the estimators. Implemented for `f32` and `f64`.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant into `Self`.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("constant representable in scalar type")
    }

    /// Lossy conversion to `f64` for reporting.
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }

    fn is_finite_val(self) -> bool {
        self.as_f64().is_finite()
    }

    /// Machine epsilon of the concrete type.
    fn machine_eps() -> Self;

    /// `target` loosened to what the type can resolve: at least `1e3 * eps`.
    fn tol(target: f64) -> Self {
        Self::lit(target.max(1e3 * Self::machine_eps().as_f64()))
    }
}

impl Real for f32 {
    fn machine_eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn machine_eps() -> Self {
        f64::EPSILON
    }
}

/// Sign with zero mapped to `+1`.
pub(crate) fn sign_pos<T: Real>(x: T) -> T {
    if x < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}
