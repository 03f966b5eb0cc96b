//! Floating-point scalar abstraction for the numerical kernels.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the mesh, solver and diagnostics are generic over.
///
/// Implemented for `f32` and `f64`. All tolerances in the crate are stated
/// for `f64`; with `f32` the same code runs but the tight quadrature and
/// root-finding tolerances are limited by the wider machine epsilon.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + std::fmt::Debug
        + std::fmt::Display
        + std::iter::Sum
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` literal into the scalar type.
///
/// Panics only if the target type cannot represent any finite `f64`, which
/// does not happen for the supported scalars.
#[inline]
pub fn lit<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("f64 literal not representable in scalar type")
}

/// Lossy view of a scalar as `f64`, used for error reporting.
#[inline]
pub fn as_f64<S: Scalar>(v: S) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}
