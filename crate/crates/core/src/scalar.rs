//! Scalar abstraction shared by the geometric modules.

use std::fmt::Debug;

use nalgebra::RealField;
use num_traits::ToPrimitive;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar usable by every generic module: `f32` or `f64`.
pub trait Real:
    RealField + Copy + ToPrimitive + Default + Debug + Serialize + DeserializeOwned + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    fn lit(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("f64 literal fits the scalar type")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
