//! Scalar abstractions.
//!
//! [`Scalar`] carries energies, exponents and prefactors. It is implemented
//! for `f64`, `f32` and `Rational64`; with rationals every exponent and
//! prefactor comparison is exact.
//!
//! [`Real`] is the floating type used by the numerical oracles.

use num_rational::Rational64;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};
use std::fmt::{Debug, Display};
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Clone + PartialOrd + Debug + Display + Num + Signed + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Two values closer than this are considered tied.
    fn tie_tolerance() -> Self;

    /// Parses a decimal (`0.25`, `1e-3`) or fractional (`3/7`) literal.
    fn parse_literal(text: &str) -> Option<Self>;

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits in scalar")
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Multiplies by a float factor; exact whenever the factor is an integer.
    fn scaled(&self, factor: f64) -> Self {
        let rounded = factor.round();
        if (factor - rounded).abs() <= 1e-12 * rounded.abs().max(1.0) {
            self.clone() * Self::from_f64(rounded).expect("integer factor")
        } else {
            self.clone() * Self::from_f64(factor).expect("finite factor")
        }
    }

    fn ties(&self, other: &Self) -> bool {
        (self.clone() - other.clone()).abs() <= Self::tie_tolerance()
    }

    /// Strictly below `other` by more than the tie tolerance.
    fn below(&self, other: &Self) -> bool {
        self.clone() < other.clone() - Self::tie_tolerance()
    }

    fn min_of(a: Self, b: Self) -> Self {
        if b < a {
            b
        } else {
            a
        }
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }
}

impl Scalar for f64 {
    fn tie_tolerance() -> Self {
        1e-9
    }

    fn parse_literal(text: &str) -> Option<Self> {
        let text = text.trim();
        if let Some((p, q)) = text.split_once('/') {
            let p: f64 = p.trim().parse().ok()?;
            let q: f64 = q.trim().parse().ok()?;
            return (q != 0.0).then(|| p / q);
        }
        text.parse().ok()
    }
}

impl Scalar for f32 {
    fn tie_tolerance() -> Self {
        1e-5
    }

    fn parse_literal(text: &str) -> Option<Self> {
        f64::parse_literal(text).map(|v| v as f32)
    }
}

impl Scalar for Rational64 {
    fn tie_tolerance() -> Self {
        Rational64::from_integer(0)
    }

    fn parse_literal(text: &str) -> Option<Self> {
        let text = text.trim();
        if let Some((p, q)) = text.split_once('/') {
            let p: i64 = p.trim().parse().ok()?;
            let q: i64 = q.trim().parse().ok()?;
            return (q != 0).then(|| Rational64::new(p, q));
        }
        parse_decimal(text)
    }
}

/// Exact conversion of a decimal literal with optional exponent.
fn parse_decimal(text: &str) -> Option<Rational64> {
    let lower = text.to_ascii_lowercase();
    let (mantissa, exponent) = match lower.split_once('e') {
        Some((m, e)) => (m.to_string(), e.parse::<i32>().ok()?),
        None => (lower.clone(), 0),
    };
    let negative = mantissa.starts_with('-');
    let digits = mantissa.trim_start_matches(['-', '+']);
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all: String = format!("{int_part}{frac_part}");
    let mut numer: i64 = if all.is_empty() { 0 } else { all.parse().ok()? };
    if negative {
        numer = -numer;
    }
    let scale = exponent - frac_part.len() as i32;
    let pow = 10i64.checked_pow(scale.unsigned_abs())?;
    Some(if scale >= 0 {
        Rational64::from_integer(numer.checked_mul(pow)?)
    } else {
        Rational64::new(numer, pow)
    })
}

/// Floating type for the numerical oracles.
pub trait Real:
    Copy
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn sqrt(self) -> Self;
    /// Unit roundoff.
    fn epsilon() -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn abs(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn epsilon() -> Self {
        f64::EPSILON
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn epsilon() -> Self {
        f32::EPSILON
    }
}

/// Unevaluated sum `hi + lo` of two doubles, about 106 bits of precision.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

impl DoubleDouble {
    pub const fn new(hi: f64, lo: f64) -> Self {
        DoubleDouble { hi, lo }
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> DoubleDouble {
    let s = a + b;
    DoubleDouble::new(s, b - (s - a))
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.hi, r.lo + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble::new(-self.hi, -self.lo)
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self - o * DoubleDouble::from_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * DoubleDouble::from_f64(q2);
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2) + DoubleDouble::from_f64(q3)
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        match self.hi.partial_cmp(&o.hi) {
            Some(std::cmp::Ordering::Equal) => self.lo.partial_cmp(&o.lo),
            other => other,
        }
    }
}

impl Real for DoubleDouble {
    fn from_f64(v: f64) -> Self {
        DoubleDouble::new(v, 0.0)
    }
    fn as_f64(self) -> f64 {
        self.hi + self.lo
    }
    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Self::zero();
        }
        let q = DoubleDouble::from_f64(self.hi.sqrt());
        q + (self - q * q) / (q + q)
    }
    fn epsilon() -> Self {
        DoubleDouble::from_f64(4.93e-32)
    }
}
