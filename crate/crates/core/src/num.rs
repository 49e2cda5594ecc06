//! Scalar abstractions shared by the numeric parts of the crate.
//!
//! Currency math is written against [`Money`] so the same cost model runs on
//! exact rationals (for reproducing published totals to the cent) or on
//! `f32`/`f64` (for fast what-if sweeps). Geometry is written against
//! [`Coord`], which is any IEEE float.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, Signed};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecimalError {
    #[error("empty decimal literal")]
    Empty,
    #[error("invalid decimal literal `{0}`")]
    Invalid(String),
    #[error("decimal literal `{0}` does not fit the target type")]
    Overflow(String),
}

/// A currency scalar.
pub trait Money: Clone + Debug + PartialOrd + Num {
    fn from_count(n: u64) -> Self;

    /// Parses a plain decimal literal such as `0.0000636` or `-12.5`.
    fn parse_decimal(s: &str) -> Result<Self, DecimalError>;

    fn to_f64(&self) -> f64;

    /// Whether arithmetic on this type is exact for decimal inputs.
    fn is_exact() -> bool;
}

/// Coordinate scalar for planar geometry.
pub trait Coord: num_traits::Float + Debug {}

impl<T: num_traits::Float + Debug> Coord for T {}

/// Splits a decimal literal into (negative, digits-without-point, fractional digit count).
fn split_decimal(s: &str) -> Result<(bool, String, u32), DecimalError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(DecimalError::Empty);
    }
    let (neg, body) = match s.as_bytes()[0] {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int.is_empty() && frac.is_empty() {
        return Err(DecimalError::Invalid(s.to_string()));
    }
    if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(DecimalError::Invalid(s.to_string()));
    }
    let scale = u32::try_from(frac.len()).map_err(|_| DecimalError::Overflow(s.to_string()))?;
    Ok((neg, format!("{int}{frac}"), scale))
}

macro_rules! impl_money_float {
    ($f:ty) => {
        impl Money for $f {
            fn from_count(n: u64) -> Self {
                n as $f
            }

            fn parse_decimal(s: &str) -> Result<Self, DecimalError> {
                split_decimal(s)?;
                s.trim().parse::<$f>().map_err(|_| DecimalError::Invalid(s.to_string()))
            }

            fn to_f64(&self) -> f64 {
                *self as f64
            }

            fn is_exact() -> bool {
                false
            }
        }
    };
}

impl_money_float!(f32);
impl_money_float!(f64);

impl Money for Ratio<i128> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(i128::from(n))
    }

    fn parse_decimal(s: &str) -> Result<Self, DecimalError> {
        let (neg, digits, scale) = split_decimal(s)?;
        let overflow = || DecimalError::Overflow(s.to_string());
        let numer: i128 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| overflow())? };
        let denom = 10i128.checked_pow(scale).ok_or_else(overflow)?;
        let r = Ratio::new(numer, denom);
        Ok(if neg { -r } else { r })
    }

    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }

    fn is_exact() -> bool {
        true
    }
}

/// Rounds half away from zero to whole cents.
pub fn to_cents<M: Money>(value: &M) -> i128 {
    (value.to_f64() * 100.0).round() as i128
}

/// Exact rounding to cents for rationals.
pub fn ratio_to_cents(value: &Ratio<i128>) -> i128 {
    let scaled = value * Ratio::from_integer(100);
    let floor = scaled.floor();
    let frac = (scaled - floor).abs();
    let base = *floor.numer();
    if frac >= Ratio::new(1, 2) {
        base + 1
    } else {
        base
    }
}

/// Renders cents as `$1,234.56`.
pub fn format_usd_cents(cents: i128) -> String {
    let neg = cents < 0;
    let abs = cents.unsigned_abs();
    let whole = (abs / 100).to_string();
    let mut grouped = String::with_capacity(whole.len() + whole.len() / 3);
    for (i, ch) in whole.chars().enumerate() {
        if i > 0 && (whole.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    format!("{}${}.{:02}", if neg { "-" } else { "" }, grouped, abs % 100)
}

/// Exact decimal rendering of a rational, truncated after `max_frac` digits.
pub fn ratio_to_decimal(value: &Ratio<i128>, max_frac: usize) -> String {
    let neg = value.is_negative();
    let v = value.abs();
    let int = v.to_integer();
    let mut rem = v.fract();
    let mut frac = String::new();
    while !num_traits::Zero::is_zero(&rem) && frac.len() < max_frac {
        rem *= Ratio::from_integer(10);
        let d = rem.to_integer();
        frac.push(char::from(b'0' + d as u8));
        rem = rem.fract();
    }
    let sign = if neg { "-" } else { "" };
    if frac.is_empty() {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac}")
    }
}
