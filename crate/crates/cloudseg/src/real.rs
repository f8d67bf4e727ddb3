//! Scalar abstraction for the numeric core.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the tensor engine is generic over: f32 or f64.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + Default + 'static
{
    /// Lossy conversion from f64, for literals and tolerances.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Real")
    }
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
