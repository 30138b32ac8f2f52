//! Exact rational arithmetic.
//!
//! Every probability and share in this crate is an arbitrary-precision
//! rational, kept in canonical form (reduced, positive denominator) by the
//! underlying type. Conversion to `f64` happens only at presentation and
//! regression boundaries.

use num_bigint::{BigInt, BigUint};
use num_traits::ToPrimitive;

pub use num_rational::BigRational as Rational;

/// Rational from small signed integers. Panics if `denom == 0`.
pub fn rat(numer: i64, denom: i64) -> Rational {
    assert!(denom != 0, "rational with zero denominator");
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

/// Rational from arbitrary-precision unsigned parts. Panics if `denom` is zero.
pub fn big_rat(numer: BigUint, denom: BigUint) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

/// Exact integer as a rational.
pub fn rat_int(value: u64) -> Rational {
    Rational::from_integer(BigInt::from(value))
}

/// Convert to `f64` at a presentation boundary.
pub fn to_f64(value: &Rational) -> f64 {
    value.to_f64().expect("rational representable as f64")
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    #[test]
    fn construction_reduces_to_canonical_form() {
        let half = rat(2, 4);
        assert_eq!(half, rat(1, 2));
        assert_eq!(half.numer(), &BigInt::from(1));
        assert_eq!(half.denom(), &BigInt::from(2));

        // negative denominators normalize
        let neg = Rational::new(BigInt::from(1), BigInt::from(-3));
        assert_eq!(neg, rat(-1, 3));
        assert!(neg.denom() > &BigInt::from(0));
    }

    #[test]
    fn arithmetic_stays_reduced() {
        let x = rat(1, 6) + rat(1, 3);
        assert_eq!(x, rat(1, 2));
        assert_eq!(x.denom(), &BigInt::from(2));

        let y = rat(2, 3) * rat(3, 4);
        assert_eq!(y, rat(1, 2));

        assert!((rat(1, 2) + rat(1, 2)).is_one());
    }

    #[test]
    fn f64_conversion_is_exact_for_dyadic_values() {
        assert_eq!(to_f64(&rat(1, 2)), 0.5);
        assert_eq!(to_f64(&rat(-3, 8)), -0.375);
        assert_eq!(to_f64(&rat_int(7)), 7.0);
    }

    #[test]
    fn f64_conversion_is_monotone_on_a_sweep() {
        let mut last = f64::NEG_INFINITY;
        for numer in 0..=64 {
            let value = to_f64(&rat(numer, 64));
            assert!(value >= last);
            last = value;
        }
    }
}
