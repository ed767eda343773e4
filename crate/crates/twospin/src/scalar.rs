//! Dual-mode scalar: exact `BigRational` or arbitrary-precision `rug::Float`.
//!
//! All model parameters and derived quantities flow through [`Scalar`].
//! Computations stay exact as long as every operand is rational; as soon as
//! one operand is a big float the result is a big float at the largest
//! operand precision. Iterative solvers convert their inputs up front with
//! [`Scalar::to_big`] so a whole solve runs at one fixed precision.
//!
//! Text form (used verbatim in JSON payloads and CLI I/O):
//! * rationals: `"p/q"` in lowest terms with positive denominator, or a bare
//!   integer; plain decimals like `"0.75"` parse as the exact rational they
//!   spell;
//! * big floats: a decimal significand-exponent string followed by
//!   `@<precision-bits>`, e.g. `"6.8232780382801933e-1@256"`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rug::float::Round;
use rug::ops::Pow;
use rug::Float;

use crate::error::{Error, Result};

/// Exact rational or big float. See the module docs for the promotion rule.
#[derive(Clone, Debug)]
pub enum Scalar {
    Rat(BigRational),
    Big(Float),
}

fn bigint_to_rug(i: &BigInt) -> rug::Integer {
    let (sign, bytes) = i.to_bytes_le();
    let mut v = rug::Integer::from_digits(&bytes, rug::integer::Order::Lsf);
    if sign == Sign::Minus {
        v = -v;
    }
    v
}

fn rat_to_rug(r: &BigRational) -> rug::Rational {
    rug::Rational::from((bigint_to_rug(r.numer()), bigint_to_rug(r.denom())))
}

impl Scalar {
    pub fn zero() -> Self {
        Scalar::Rat(BigRational::zero())
    }

    pub fn one() -> Self {
        Scalar::Rat(BigRational::one())
    }

    pub fn from_int(n: i64) -> Self {
        Scalar::Rat(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn from_ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Scalar::Rat(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn from_f64(x: f64, prec: u32) -> Self {
        Scalar::Big(Float::with_val(prec, x))
    }

    pub fn is_rat(&self) -> bool {
        matches!(self, Scalar::Rat(_))
    }

    /// Precision in bits if this is a big float.
    pub fn prec(&self) -> Option<u32> {
        match self {
            Scalar::Rat(_) => None,
            Scalar::Big(f) => Some(f.prec()),
        }
    }

    pub fn to_big(&self, prec: u32) -> Float {
        match self {
            Scalar::Rat(r) => Float::with_val(prec, rat_to_rug(r)),
            Scalar::Big(f) => Float::with_val(prec, f),
        }
    }

    /// Round to the nearest f64 (diagnostics and thresholds only).
    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Rat(r) => {
                Float::with_val(64, rat_to_rug(r)).to_f64()
            }
            Scalar::Big(f) => f.to_f64(),
        }
    }

    pub fn as_rat(&self) -> Option<&BigRational> {
        match self {
            Scalar::Rat(r) => Some(r),
            Scalar::Big(_) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Scalar::Rat(r) => r.is_zero(),
            Scalar::Big(f) => f.is_zero(),
        }
    }

    pub fn is_negative(&self) -> bool {
        match self {
            Scalar::Rat(r) => r.is_negative(),
            Scalar::Big(f) => f.is_sign_negative() && !f.is_zero(),
        }
    }

    pub fn is_positive(&self) -> bool {
        match self {
            Scalar::Rat(r) => r.is_positive(),
            Scalar::Big(f) => f.is_sign_positive() && !f.is_zero(),
        }
    }

    pub fn abs(&self) -> Scalar {
        match self {
            Scalar::Rat(r) => Scalar::Rat(r.abs()),
            Scalar::Big(f) => Scalar::Big(f.clone().abs()),
        }
    }

    pub fn recip(&self) -> Scalar {
        match self {
            Scalar::Rat(r) => {
                assert!(!r.is_zero(), "reciprocal of zero");
                Scalar::Rat(r.recip())
            }
            Scalar::Big(f) => Scalar::Big(Float::with_val(f.prec(), f.recip_ref())),
        }
    }

    /// Integer power with arbitrary sign of the exponent.
    pub fn pow_i(&self, exp: i32) -> Scalar {
        match self {
            Scalar::Rat(r) => {
                if exp < 0 {
                    assert!(!r.is_zero(), "negative power of zero");
                }
                Scalar::Rat(r.pow(exp))
            }
            Scalar::Big(f) => Scalar::Big(Float::with_val(f.prec(), f.pow(exp))),
        }
    }

    /// Square root; forces big-float mode at `prec` when the value is
    /// rational (even for perfect squares, so callers get a stable mode).
    pub fn sqrt_big(&self, prec: u32) -> Scalar {
        let f = self.to_big(prec);
        Scalar::Big(Float::with_val(prec, f.sqrt_ref()))
    }

    /// Natural log in big-float mode at `prec`.
    pub fn ln_big(&self, prec: u32) -> Scalar {
        let f = self.to_big(prec);
        Scalar::Big(Float::with_val(prec, f.ln_ref()))
    }

    pub fn min(self, other: Scalar) -> Scalar {
        if other < self {
            other
        } else {
            self
        }
    }

    pub fn max(self, other: Scalar) -> Scalar {
        if other > self {
            other
        } else {
            self
        }
    }

    /// Canonical text form; inverse of [`Scalar::parse`].
    pub fn to_text(&self) -> String {
        match self {
            Scalar::Rat(r) => {
                if r.denom().is_one() {
                    r.numer().to_string()
                } else {
                    format!("{}/{}", r.numer(), r.denom())
                }
            }
            Scalar::Big(f) => {
                let digits =
                    (f.prec() as f64 * std::f64::consts::LOG10_2).ceil() as usize + 2;
                format!("{}@{}", float_to_decimal(f, digits), f.prec())
            }
        }
    }

    /// Parse the canonical text form. A trailing `@bits` selects big-float
    /// mode; everything else ("p/q", integers, plain decimals) is exact.
    pub fn parse(s: &str) -> Result<Scalar> {
        let s = s.trim();
        if let Some((mant, prec)) = s.rsplit_once('@') {
            let prec: u32 = prec
                .parse()
                .map_err(|_| Error::Parse(format!("bad precision in scalar {s:?}")))?;
            if !(2..=16_384).contains(&prec) {
                return Err(Error::Parse(format!("precision out of range in {s:?}")));
            }
            let parsed = Float::parse(mant)
                .map_err(|_| Error::Parse(format!("bad float literal {mant:?}")))?;
            return Ok(Scalar::Big(Float::with_val(prec, parsed)));
        }
        if let Some((num, den)) = s.split_once('/') {
            let n = BigInt::from_str(num.trim())
                .map_err(|_| Error::Parse(format!("bad numerator {num:?}")))?;
            let d = BigInt::from_str(den.trim())
                .map_err(|_| Error::Parse(format!("bad denominator {den:?}")))?;
            if d.is_zero() {
                return Err(Error::Parse(format!("zero denominator in {s:?}")));
            }
            return Ok(Scalar::Rat(BigRational::new(n, d)));
        }
        if let Some((int_part, frac_part)) = s.split_once('.') {
            let digits = frac_part.trim();
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(Error::Parse(format!("bad decimal literal {s:?}")));
            }
            let sign = if int_part.trim_start().starts_with('-') { -1 } else { 1 };
            let i = BigInt::from_str(int_part.trim())
                .map_err(|_| Error::Parse(format!("bad integer part {int_part:?}")))?;
            let scale = BigInt::from(10u32).pow(digits.len() as u32);
            let frac = BigInt::from_str(digits)
                .map_err(|_| Error::Parse(format!("bad fraction digits {digits:?}")))?;
            let numer = &i * &scale + BigInt::from(sign) * frac;
            return Ok(Scalar::Rat(BigRational::new(numer, scale)));
        }
        let n = BigInt::from_str(s).map_err(|_| Error::Parse(format!("bad scalar {s:?}")))?;
        Ok(Scalar::Rat(BigRational::from_integer(n)))
    }
}

/// Decimal string with explicit exponent, `d.dddde[+-]ddd`, using round to
/// nearest. Produced digits round-trip for the float's own precision.
fn float_to_decimal(f: &Float, digits: usize) -> String {
    if f.is_zero() {
        return "0".to_string();
    }
    let (sign, mant, exp) = f.to_sign_string_exp_round(10, Some(digits), Round::Nearest);
    let exp = exp.unwrap_or(1);
    let sign = if sign { "-" } else { "" };
    let mant = mant.trim_end_matches('0');
    let mant = if mant.is_empty() { "0" } else { mant };
    let (head, tail) = mant.split_at(1);
    if tail.is_empty() {
        format!("{sign}{head}e{}", exp - 1)
    } else {
        format!("{sign}{head}.{tail}e{}", exp - 1)
    }
}

fn promote(a: &Scalar, b: &Scalar) -> Option<(Float, Float)> {
    match (a, b) {
        (Scalar::Rat(_), Scalar::Rat(_)) => None,
        _ => {
            let prec = a.prec().unwrap_or(0).max(b.prec().unwrap_or(0));
            Some((a.to_big(prec), b.to_big(prec)))
        }
    }
}

macro_rules! scalar_binop {
    ($trait:ident, $method:ident) => {
        impl std::ops::$trait<&Scalar> for &Scalar {
            type Output = Scalar;
            fn $method(self, rhs: &Scalar) -> Scalar {
                match promote(self, rhs) {
                    None => {
                        let (Scalar::Rat(a), Scalar::Rat(b)) = (self, rhs) else {
                            unreachable!()
                        };
                        Scalar::Rat(std::ops::$trait::$method(a, b))
                    }
                    Some((a, b)) => {
                        let prec = a.prec();
                        Scalar::Big(Float::with_val(prec, std::ops::$trait::$method(&a, &b)))
                    }
                }
            }
        }
        impl std::ops::$trait<Scalar> for Scalar {
            type Output = Scalar;
            fn $method(self, rhs: Scalar) -> Scalar {
                std::ops::$trait::$method(&self, &rhs)
            }
        }
        impl std::ops::$trait<&Scalar> for Scalar {
            type Output = Scalar;
            fn $method(self, rhs: &Scalar) -> Scalar {
                std::ops::$trait::$method(&self, rhs)
            }
        }
        impl std::ops::$trait<Scalar> for &Scalar {
            type Output = Scalar;
            fn $method(self, rhs: Scalar) -> Scalar {
                std::ops::$trait::$method(self, &rhs)
            }
        }
    };
}

scalar_binop!(Add, add);
scalar_binop!(Sub, sub);
scalar_binop!(Mul, mul);
scalar_binop!(Div, div);

impl std::ops::Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        match self {
            Scalar::Rat(r) => Scalar::Rat(-r),
            Scalar::Big(f) => Scalar::Big(Float::with_val(f.prec(), -f)),
        }
    }
}

impl std::ops::Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        -&self
    }
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        self.partial_cmp(other) == Some(Ordering::Equal)
    }
}

impl PartialOrd for Scalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Scalar::Rat(a), Scalar::Rat(b)) => a.partial_cmp(b),
            // Mixed comparisons are exact: a float compares against the
            // exact rational without rounding the rational first.
            (Scalar::Big(a), Scalar::Rat(b)) => a.partial_cmp(&rat_to_rug(b)),
            (Scalar::Rat(a), Scalar::Big(b)) => {
                b.partial_cmp(&rat_to_rug(a)).map(Ordering::reverse)
            }
            (Scalar::Big(a), Scalar::Big(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl serde::Serialize for Scalar {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_text())
    }
}

impl<'de> serde::Deserialize<'de> for Scalar {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Scalar::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Scalar {
        Scalar::from_ratio(n, d)
    }

    #[test]
    fn rational_arithmetic_is_exact() {
        let x = r(1, 3) + r(1, 6);
        assert_eq!(x, r(1, 2));
        let y = r(2, 3) * r(9, 4) - r(1, 1);
        assert_eq!(y, r(1, 2));
        assert_eq!(r(-3, 9).to_text(), "-1/3");
        assert_eq!(r(4, 2).to_text(), "2");
    }

    #[test]
    fn parse_round_trip() {
        for s in ["1/2", "-7/3", "5", "0", "-12"] {
            let v = Scalar::parse(s).unwrap();
            assert_eq!(v.to_text(), s);
        }
        assert_eq!(Scalar::parse("0.75").unwrap(), r(3, 4));
        assert_eq!(Scalar::parse("-1.5").unwrap(), r(-3, 2));
        assert_eq!(Scalar::parse(" 2 / 4 ").unwrap(), r(1, 2));
        assert!(Scalar::parse("1/0").is_err());
        assert!(Scalar::parse("abc").is_err());
    }

    #[test]
    fn big_float_round_trip_and_promotion() {
        let x = Scalar::from_ratio(1, 3).sqrt_big(128);
        let text = x.to_text();
        assert!(text.ends_with("@128"), "{text}");
        let y = Scalar::parse(&text).unwrap();
        let diff = (&x - &y).abs();
        assert!(diff < Scalar::from_ratio(1, 1 << 30).pow_i(3), "{diff}");

        let mixed = r(1, 2) + Scalar::from_f64(0.5, 100);
        assert_eq!(mixed.prec(), Some(100));
        assert_eq!(mixed, Scalar::from_int(1));
    }

    #[test]
    fn mixed_comparison_is_exact() {
        let third_lo = Scalar::Big(Float::with_val(20, 1) / Float::with_val(20, 3));
        // 1/3 rounded to 20 bits is not exactly 1/3.
        assert_ne!(third_lo, r(1, 3));
        assert_eq!(Scalar::from_f64(0.25, 24), r(1, 4));
        assert!(r(1, 3) > Scalar::from_f64(0.25, 24));
    }

    #[test]
    fn powers_and_reciprocals() {
        assert_eq!(r(2, 3).pow_i(3), r(8, 27));
        assert_eq!(r(2, 3).pow_i(-2), r(9, 4));
        assert_eq!(r(2, 3).pow_i(0), Scalar::one());
        assert_eq!(r(-5, 7).recip(), r(-7, 5));
    }

    #[test]
    fn zero_float_serializes() {
        let z = Scalar::from_f64(0.0, 64);
        assert_eq!(z.to_text(), "0@64");
        assert!(Scalar::parse("0@64").unwrap().is_zero());
    }
}
