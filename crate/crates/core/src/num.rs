//! Scalar abstractions shared by every numeric module.
//!
//! Two families are used:
//! - [`Real`]: floating-point scalars (`f32`, `f64`) for everything that needs
//!   transcendental functions (softmax, logarithms, Dirichlet draws).
//! - [`Probability`]: anything that can carry a transition probability of an
//!   automaton. Floats qualify, and so do rationals, which lets behavior
//!   distributions be enumerated exactly.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Float, FromPrimitive, Num, NumCast, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Floating-point scalar used by the learned models.
pub trait Real:
    Float
    + FromPrimitive
    + NumCast
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Tolerance used when checking that a vector lies on the simplex.
    fn simplex_tolerance() -> Self;

    /// Uniform draw from `[0, 1)`.
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw from `Gamma(shape, 1)`. `shape` must be positive.
    fn sample_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self;

    /// Lossy conversion from `f64`, used for literals.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in every Real")
    }

    /// Lossless-enough conversion to `f64`, used for serialization and reports.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real is convertible to f64")
    }
}

macro_rules! impl_real {
    ($t:ty, $tol:expr) => {
        impl Real for $t {
            fn simplex_tolerance() -> Self {
                $tol
            }

            fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random::<$t>()
            }

            fn sample_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self {
                Gamma::new(shape, 1.0)
                    .expect("gamma shape must be positive and finite")
                    .sample(rng)
            }
        }
    };
}

impl_real!(f64, 1e-9);
impl_real!(f32, 1e-5);

/// A value that can label an automaton transition.
///
/// [`Probability::one_tolerance`] is zero for exact types, so "sums to one" is
/// checked with equality for rationals and with `1e-9` slack for `f64`.
pub trait Probability:
    Clone + PartialOrd + Num + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Slack allowed when comparing a sum of probabilities to one.
    fn one_tolerance() -> f64;

    /// `true` if `self` is within the type's tolerance of one.
    fn is_one(&self) -> bool {
        match Self::one_tolerance() {
            t if t == 0.0 => *self == Self::one(),
            t => (self.to_f64().unwrap_or(f64::NAN) - 1.0).abs() <= t,
        }
    }

    /// `1 / n`, exactly for rationals.
    fn reciprocal_of(n: usize) -> Self {
        Self::one() / Self::from_usize(n).expect("count representable")
    }

    /// Nearest `f64`; NaN if the value does not fit.
    fn approx_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Probability for f64 {
    fn one_tolerance() -> f64 {
        1e-9
    }
}

impl Probability for f32 {
    fn one_tolerance() -> f64 {
        1e-6
    }
}

impl Probability for BigRational {
    fn one_tolerance() -> f64 {
        0.0
    }
}

impl Probability for Ratio<i64> {
    fn one_tolerance() -> f64 {
        0.0
    }
}

/// Exact rational `num / den` as a [`BigRational`].
pub fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// `log(sum(exp(xs)))`, stable for large negative inputs.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let s: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// `log(mean(exp(xs)))`.
pub fn log_mean_exp<T: Real>(xs: &[T]) -> T {
    log_sum_exp(xs) - T::from_usize(xs.len()).expect("length representable").ln()
}

/// Mean of a slice; zero for an empty slice.
pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    xs.iter().copied().sum::<T>() / T::from_usize(xs.len()).unwrap()
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance<T: Real>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    ss / T::from_usize(xs.len() - 1).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rational_reciprocal_is_exact() {
        let third = BigRational::reciprocal_of(3);
        let sum = third.clone() + third.clone() + third;
        assert!(Probability::is_one(&sum));
        assert_eq!(sum, BigRational::one());
    }

    #[test]
    fn float_is_one_uses_slack() {
        assert!(Probability::is_one(&(1.0f64 + 1e-12)));
        assert!(!Probability::is_one(&0.9f64));
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs = [0.1f64.ln(), 0.2f64.ln(), 0.3f64.ln()];
        assert!((log_sum_exp(&xs) - 0.6f64.ln()).abs() < 1e-12);
        assert!((log_mean_exp(&xs) - 0.2f64.ln()).abs() < 1e-12);
        let tiny = [-1000.0f64, -1000.0];
        assert!((log_sum_exp(&tiny) - (-1000.0 + 2f64.ln())).abs() < 1e-9);
        assert_eq!(log_sum_exp::<f64>(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn gamma_draws_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(f64::sample_gamma(0.1, &mut rng) >= 0.0);
            assert!(f32::sample_gamma(2.0, &mut rng) > 0.0);
        }
    }

    #[test]
    fn variance_of_constant_is_zero() {
        assert_eq!(sample_variance(&[2.0f64; 5]), 0.0);
        assert!((sample_variance(&[1.0f64, 3.0]) - 2.0).abs() < 1e-12);
    }
}
