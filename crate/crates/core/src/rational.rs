//! Exact rational arithmetic.
//!
//! Every quantity in this crate (values, shares, fractions, probabilities)
//! is a [`Rational`]: an arbitrary-precision fraction kept in lowest terms
//! with a positive denominator. There is no floating point anywhere on a
//! value path, so every comparison and every certificate is exact.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{One, Signed, Zero};
use serde_json::Value;

pub type Rational = BigRational;

/// Rational from an integer.
pub fn rat(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Rational `n/d`. Panics on `d == 0`.
pub fn ratio(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn zero() -> Rational {
    Rational::zero()
}

pub fn one() -> Rational {
    Rational::one()
}

/// Parses `"p/q"` or `"p"` (optionally signed). The denominator must be
/// nonzero; the result is normalized.
pub fn parse_rational(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    match s.split_once('/') {
        Some((num, den)) => {
            let n: BigInt = num
                .trim()
                .parse()
                .map_err(|_| format!("invalid numerator in {s:?}"))?;
            let d: BigInt = den
                .trim()
                .parse()
                .map_err(|_| format!("invalid denominator in {s:?}"))?;
            if d.is_zero() {
                return Err(format!("zero denominator in {s:?}"));
            }
            Ok(Rational::new(n, d))
        }
        None => {
            let n: BigInt = s.parse().map_err(|_| format!("invalid rational {s:?}"))?;
            Ok(Rational::from_integer(n))
        }
    }
}

/// JSON encoding of a rational: always a string, `"p/q"` when the value is
/// not an integer and plain `"p"` otherwise.
pub fn rational_to_json(r: &Rational) -> Value {
    Value::String(r.to_string())
}

/// Accepts a JSON integer or a string `"p/q"` / `"p"`.
pub fn rational_from_json(v: &Value) -> Result<Rational, String> {
    match v {
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(rat(i))
            } else if let Some(u) = n.as_u64() {
                Ok(Rational::from_integer(BigInt::from(u)))
            } else {
                Err(format!("non-integer number {n} (use a \"p/q\" string)"))
            }
        }
        Value::String(s) => parse_rational(s),
        other => Err(format!("expected rational, got {other}")),
    }
}

/// Exact sum of a sequence of rationals.
pub fn sum<'a>(iter: impl IntoIterator<Item = &'a Rational>) -> Rational {
    iter.into_iter().fold(Rational::zero(), |acc, x| acc + x)
}

pub fn is_nonnegative(r: &Rational) -> bool {
    !r.is_negative()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        assert_eq!(parse_rational("3/4").unwrap(), ratio(3, 4));
        assert_eq!(parse_rational("-3/4").unwrap(), ratio(-3, 4));
        assert_eq!(parse_rational("10").unwrap(), rat(10));
        assert_eq!(parse_rational(" 6/8 ").unwrap(), ratio(3, 4));
        assert_eq!(ratio(3, 4).to_string(), "3/4");
        assert_eq!(rat(5).to_string(), "5");
        assert_eq!(ratio(4, -8).to_string(), "-1/2");
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
    }

    #[test]
    fn json_round_trip() {
        let vals = [ratio(7, 3), rat(-2), zero(), ratio(-9, 11)];
        for v in &vals {
            let j = rational_to_json(v);
            assert_eq!(&rational_from_json(&j).unwrap(), v);
        }
        // integers allowed on input
        assert_eq!(rational_from_json(&serde_json::json!(17)).unwrap(), rat(17));
        assert!(rational_from_json(&serde_json::json!(0.5)).is_err());
    }

    #[test]
    fn lowest_terms_invariant() {
        let r = Rational::new(BigInt::from(6), BigInt::from(-9));
        assert_eq!(r.numer(), &BigInt::from(-2));
        assert_eq!(r.denom(), &BigInt::from(3));
    }
}
