//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the models, buffers and networks are generic over.
///
/// Implemented for `f32` and `f64`. Gradient checks and the density model's
/// bound-monotonicity checks are only meaningful at `f64` precision.
pub trait Scalar:
    Float
    + FloatConst
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
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Lossy for `f32`.
    fn c(x: f64) -> Self;

    /// Converts a count.
    fn from_count(n: usize) -> Self {
        Self::c(n as f64)
    }

    fn as_f64(self) -> f64;

    /// Smallest density the crate lets a probability underflow to.
    fn density_floor() -> Self;

    /// Elementwise `tanh`, the network's hot activation.
    fn tanh_in_place(xs: &mut [Self]) {
        xs.iter_mut().for_each(|x| *x = x.tanh());
    }
}

impl Scalar for f32 {
    #[inline]
    fn c(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn density_floor() -> Self {
        f32::MIN_POSITIVE
    }

    /// Rational minimax approximation, accurate to a few ulp and branch-free
    /// so the loop vectorizes.
    fn tanh_in_place(xs: &mut [Self]) {
        const CLAMP: f32 = 7.905_311;
        const A: [f32; 7] = [
            4.893_524_6e-3,
            6.372_619_3e-4,
            1.485_722_4e-5,
            5.122_297e-8,
            -8.604_672e-11,
            2.000_188e-13,
            -2.760_768_5e-16,
        ];
        const B: [f32; 4] = [4.893_525e-3, 2.268_434_6e-3, 1.185_347_1e-4, 1.198_258_4e-6];
        for v in xs.iter_mut() {
            let x = v.clamp(-CLAMP, CLAMP);
            let x2 = x * x;
            let p = x2 * (x2 * (x2 * (x2 * (x2 * A[6] + A[5]) + A[4]) + A[3]) + A[2]) + A[1];
            let p = x * (x2 * p + A[0]);
            let q = x2 * (x2 * (x2 * B[3] + B[2]) + B[1]) + B[0];
            *v = p / q;
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn c(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn density_floor() -> Self {
        1e-300
    }
}

/// Numerically stable `log(sum(exp(xs)))`. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs
        .iter()
        .copied()
        .fold(T::neg_infinity(), |m, x| if x > m { x } else { m });
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

pub(crate) fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}
