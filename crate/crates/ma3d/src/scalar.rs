//! Scalar abstraction for the numeric kernel.
//!
//! Everything geometric in this crate (polytope measures, second differences, the
//! Newton loop) is written against [`Real`] so that `f32` and `f64` both work; the
//! crate root exports `f64` aliases for the common case. Exact rational arithmetic
//! (used for cube boundary steps) lives in `num_rational` and does not go through
//! this trait.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable by every algorithm in this crate.
///
/// A blanket impl covers `f32` and `f64` (and any other type satisfying the
/// bounds). The two helpers exist because almost every function needs to inject
/// small constants and to export results for reporting.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Inject an `f64` constant. Panics only if the target type cannot represent
    /// any approximation of `x`, which does not happen for `f32`/`f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("scalar conversion from f64")
    }

    /// Export to `f64` for reports and serialization.
    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar conversion to f64")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}
