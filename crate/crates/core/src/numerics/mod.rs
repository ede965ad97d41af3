//! Dense arithmetic, seeded randomness, the adaptive-moment optimizer and a
//! central-difference gradient checker.

mod adam;
mod gradcheck;
mod matrix;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, BlockCheck};
pub use matrix::{axpy, dot, norm, Matrix};
pub use rng::{RngState, SeededRng};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the numeric code is generic over. Production paths run in
/// `f32`; gradient checking instantiates the same code with `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in every Real")
    }

    #[inline]
    fn cast<U: Real>(self) -> U {
        U::from_f64(self.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan)
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

pub(crate) fn cast_slice<T: Real, U: Real>(xs: &[T]) -> Vec<U> {
    xs.iter().map(|&x| x.cast()).collect()
}
