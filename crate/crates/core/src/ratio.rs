//! Exact rational numbers for difficulties, discrimination indices and stakes.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub type Rational = BigRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid rational `{0}`")]
pub struct ParseRationalError(pub String);

/// Parses `p/q`, an integer, or a finite decimal such as `0.125`.
pub fn parse_rational(s: &str) -> Result<Rational, ParseRationalError> {
    let err = || ParseRationalError(s.to_string());
    let s = s.trim();
    if s.is_empty() {
        return Err(err());
    }
    if let Some((num, den)) = s.split_once('/') {
        let num: BigInt = parse_int(num).ok_or_else(err)?;
        let den: BigInt = parse_int(den).ok_or_else(err)?;
        if den.is_zero() {
            return Err(err());
        }
        return Ok(Rational::new(num, den));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    let digits = |d: &str| d.bytes().all(|b| b.is_ascii_digit());
    if !digits(int_part) || !digits(frac_part) {
        return Err(err());
    }
    let all = format!("{int_part}{frac_part}");
    let num: BigInt = all.parse().map_err(|_| err())?;
    let den = BigInt::from(10u32).pow(frac_part.len() as u32);
    let r = Rational::new(num, den);
    Ok(if neg { -r } else { r })
}

fn parse_int(s: &str) -> Option<BigInt> {
    let body = s.strip_prefix('-').unwrap_or(s);
    if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Canonical text form: `p` for integers, otherwise reduced `p/q`.
pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Exact conversion of a finite float.
pub fn from_f64(x: f64) -> Option<Rational> {
    Rational::from_float(x)
}

pub fn from_u64(x: u64) -> Rational {
    Rational::from_integer(BigInt::from(x))
}

pub fn ratio(num: u64, den: u64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn from_biguint(x: &BigUint) -> Rational {
    Rational::from_integer(BigInt::from(x.clone()))
}

pub fn is_positive(r: &Rational) -> bool {
    r.is_positive()
}

pub fn in_unit_interval(r: &Rational) -> bool {
    !r.is_negative() && r <= &Rational::one()
}
