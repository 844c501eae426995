//! Scalar abstraction shared by every numeric module.
//!
//! All signal-processing code is written against [`Real`], which is
//! implemented for `f32` and `f64`. The concrete aliases at the crate root
//! pick `f64`, which is what the file formats and the CLI use.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar usable by the whole workbench.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + FftNum
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Machine epsilon as an associated constant-like accessor.
    fn eps() -> Self {
        Float::epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts a count into the working scalar.
#[inline]
pub fn count<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar converts to f64")
}

/// Complex sample alias.
pub type C<T> = Complex<T>;

#[inline]
pub fn cplx<T: Real>(re: f64, im: f64) -> C<T> {
    Complex::new(lit(re), lit(im))
}

/// Unit-modulus complex number `e^{j phase}`.
#[inline]
pub fn expj<T: Real>(phase: T) -> C<T> {
    Complex::new(phase.cos(), phase.sin())
}

/// Power ratio in dB; zero maps to a -300 dB floor instead of `-inf`.
#[inline]
pub fn db10<T: Real>(ratio: T) -> T {
    if ratio <= T::zero() {
        lit(-300.0)
    } else {
        lit::<T>(10.0) * ratio.log10()
    }
}

#[inline]
pub fn from_db10<T: Real>(db: T) -> T {
    lit::<T>(10.0).powf(db / lit(10.0))
}

/// Mean of `|x|^2`.
pub fn mean_power<T: Real>(x: &[C<T>]) -> T {
    if x.is_empty() {
        return T::zero();
    }
    x.iter().map(|s| s.norm_sqr()).sum::<T>() / count(x.len())
}

/// `sum conj(a) * b`.
pub fn inner<T: Real>(a: &[C<T>], b: &[C<T>]) -> C<T> {
    a.iter()
        .zip(b)
        .fold(C::new(T::zero(), T::zero()), |acc, (x, y)| acc + x.conj() * y)
}
