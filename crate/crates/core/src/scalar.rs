//! Generic scalar abstraction: the whole library is written against
//! [`Scalar`] so every routine runs at f32 or f64 precision.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable everywhere in the library.
pub trait Scalar:
    nalgebra::RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: nalgebra::RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

/// Converts an f64 constant into the working scalar type.
#[inline]
pub fn real<R: Scalar>(v: f64) -> R {
    R::from_f64(v).expect("f64 constant must be representable in the scalar type")
}

/// Converts a usize count into the working scalar type.
#[inline]
pub fn real_of_usize<R: Scalar>(v: usize) -> R {
    R::from_usize(v).expect("count must be representable in the scalar type")
}

/// Lossy view of a scalar as f64, for diagnostics and serialization.
#[inline]
pub fn as_f64<R: Scalar>(v: R) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}
