//! Scalar abstraction for the compute path.
//!
//! Domain types (mesh coordinates, signal files, checkpoints) are always
//! 64-bit. The transform/training pipeline is generic over [`Real`] so the
//! trainer's precision flag can switch the compute dtype to `f32` without
//! touching file formats.

use num_traits::{Float, NumAssign};

pub trait Real:
    Float + NumAssign + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Narrowing conversion from an `f64` literal or domain value.
    fn of(x: f64) -> Self;
    /// Widening conversion back to `f64` for reporting and serialization.
    fn into_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self as f64
    }
}
