//! Scalar abstraction for the numeric core.
//!
//! Everything downstream is generic over [`Scalar`] so the same code runs
//! in f32 or f64. The trait folds in the num-traits float surface plus the
//! handful of capabilities the library needs that num-traits does not
//! provide: seeded sampling from the base distributions and high-accuracy
//! special functions. The special functions are evaluated in f64 internally
//! (for f32 that is strictly more accurate than a native f32 evaluation).

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use std::fmt::{Debug, Display};
use std::iter::Sum;

use crate::special;

/// Floating-point scalar the numeric core is generic over.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from f64 (rounds once for f32).
    fn of(v: f64) -> Self;

    /// Widening conversion to f64 (exact for f32 and f64).
    fn as_f64(self) -> f64;

    /// One standard normal draw.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One Gamma(shape, scale) draw.
    fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self;

    /// One χ²(df) draw, df > 0 and possibly fractional.
    fn chi_squared_draw<R: Rng + ?Sized>(rng: &mut R, df: Self) -> Self {
        Self::gamma_draw(rng, df / Self::of(2.0), Self::of(2.0))
    }

    /// ln Γ(x), x > 0.
    fn ln_gamma(self) -> Self {
        Self::of(special::ln_gamma(self.as_f64()))
    }

    /// Digamma ψ(x), x > 0.
    fn digamma(self) -> Self {
        Self::of(special::digamma(self.as_f64()))
    }

    /// Error function.
    fn erf(self) -> Self {
        Self::of(special::erf(self.as_f64()))
    }

    /// Standard normal CDF.
    fn norm_cdf(self) -> Self {
        Self::of(special::norm_cdf(self.as_f64()))
    }

    /// Standard normal density.
    fn norm_pdf(self) -> Self {
        Self::of(special::norm_pdf(self.as_f64()))
    }

    /// Standard normal quantile, p in (0, 1).
    fn norm_quantile(p: Self) -> Self {
        Self::of(special::norm_quantile(p.as_f64()))
    }

    /// Modified Bessel function of the second kind K_ν(x), ν ≥ 0, x > 0.
    fn bessel_k(nu: Self, x: Self) -> Self {
        Self::of(special::bessel_k(nu.as_f64(), x.as_f64()))
    }
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn of(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self {
                Gamma::<$t>::new(shape, scale)
                    .expect("gamma parameters validated upstream")
                    .sample(rng)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Shorthand for lifting an f64 literal into the generic scalar type.
pub fn c<S: Scalar>(v: f64) -> S {
    S::of(v)
}
