use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type the whole toolkit is generic over. `f32` and `f64` both
/// qualify; concrete aliases live at the crate root.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {}

impl<T> Scalar for T where T: RealField + Copy + FromPrimitive + ToPrimitive {}

/// Shorthand for pulling literals into the generic scalar type.
#[inline]
pub fn c<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal not representable in scalar type")
}
