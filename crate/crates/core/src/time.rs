//! Extended-precision time values.
//!
//! Timestamps in a TWTT exchange are of order seconds while the quantities
//! recovered from them (skew deviations, ToF) live at the 1e-12 level and
//! below. [`Seconds`] therefore stores an unevaluated sum of two `f64`
//! (double-double arithmetic, ~106 bit significand) so that differences of
//! nearly equal timestamps keep their low-order bits.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Error-free sum: returns `(s, e)` with `s = fl(a + b)` and `a + b = s + e`.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let e = b - (s - a);
    (s, e)
}

/// Error-free product via fused multiply-add.
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let e = a.mul_add(b, -p);
    (p, e)
}

/// A time value in seconds carried in double-double precision.
///
/// The pair `(hi, lo)` is kept normalized: `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Default, PartialEq)]
pub struct Seconds {
    hi: f64,
    lo: f64,
}

impl Seconds {
    pub const ZERO: Seconds = Seconds { hi: 0.0, lo: 0.0 };

    /// Wraps a finite `f64`.
    ///
    /// Non-finite values are a programming error and trip a debug assertion.
    pub fn new(value: f64) -> Self {
        debug_assert!(value.is_finite(), "Seconds must be finite, got {value}");
        Seconds { hi: value, lo: 0.0 }
    }

    /// Builds a value from an unnormalized pair `hi + lo`.
    pub fn from_parts(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        Seconds { hi, lo }
    }

    /// Exact conversion of a signed integer count (all 64 bits retained).
    pub fn from_i64(value: i64) -> Self {
        let hi = value as f64;
        // `hi` may have rounded; the remainder is exactly representable.
        let lo = (value as i128 - hi as i128) as f64;
        Seconds::from_parts(hi, lo)
    }

    /// Exact conversion of an unsigned 64-bit count.
    pub fn from_u64(value: u64) -> Self {
        let hi = value as f64;
        let lo = (value as i128 - hi as i128) as f64;
        Seconds::from_parts(hi, lo)
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    /// Nearest `f64`.
    pub fn as_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }

    /// Largest integer not greater than `self`, returned as double-double.
    pub fn floor(self) -> Self {
        let hi = self.hi.floor();
        if hi == self.hi {
            // hi already integral, the fractional part lives in lo
            Seconds::from_parts(hi, self.lo.floor())
        } else {
            Seconds { hi, lo: 0.0 }
        }
    }

    /// Double-double multiplication.
    pub fn mul_dd(self, rhs: Seconds) -> Seconds {
        let (p, e) = two_prod(self.hi, rhs.hi);
        let e = e + (self.hi * rhs.lo + self.lo * rhs.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Seconds { hi, lo }
    }

    /// Double-double division (`self / rhs`), accurate to ~1e-31 relative.
    pub fn div_dd(self, rhs: Seconds) -> Seconds {
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * q1;
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * q2;
        let q3 = r.hi / rhs.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Seconds { hi, lo } + Seconds::new(q3)
    }
}

impl fmt::Debug for Seconds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Seconds({:e} + {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for Seconds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} s", self.as_f64())
    }
}

impl From<f64> for Seconds {
    fn from(value: f64) -> Self {
        Seconds::new(value)
    }
}

impl PartialOrd for Seconds {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            ord => Some(ord),
        }
    }
}

impl Neg for Seconds {
    type Output = Seconds;
    fn neg(self) -> Seconds {
        Seconds {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Seconds {
    type Output = Seconds;
    fn add(self, rhs: Seconds) -> Seconds {
        let (s1, s2) = two_sum(self.hi, rhs.hi);
        let (t1, t2) = two_sum(self.lo, rhs.lo);
        let s2 = s2 + t1;
        let (s1, s2) = quick_two_sum(s1, s2);
        let s2 = s2 + t2;
        let (hi, lo) = quick_two_sum(s1, s2);
        Seconds { hi, lo }
    }
}

impl Sub for Seconds {
    type Output = Seconds;
    fn sub(self, rhs: Seconds) -> Seconds {
        self + (-rhs)
    }
}

impl AddAssign for Seconds {
    fn add_assign(&mut self, rhs: Seconds) {
        *self = *self + rhs;
    }
}

impl SubAssign for Seconds {
    fn sub_assign(&mut self, rhs: Seconds) {
        *self = *self - rhs;
    }
}

impl Add<f64> for Seconds {
    type Output = Seconds;
    fn add(self, rhs: f64) -> Seconds {
        self + Seconds::new(rhs)
    }
}

impl Sub<f64> for Seconds {
    type Output = Seconds;
    fn sub(self, rhs: f64) -> Seconds {
        self - Seconds::new(rhs)
    }
}

impl Mul<f64> for Seconds {
    type Output = Seconds;
    fn mul(self, rhs: f64) -> Seconds {
        let (p, e) = two_prod(self.hi, rhs);
        let e = e + self.lo * rhs;
        let (hi, lo) = quick_two_sum(p, e);
        Seconds { hi, lo }
    }
}

impl Div<f64> for Seconds {
    type Output = Seconds;
    fn div(self, rhs: f64) -> Seconds {
        self.div_dd(Seconds::new(rhs))
    }
}

impl Sum for Seconds {
    fn sum<I: Iterator<Item = Seconds>>(iter: I) -> Seconds {
        iter.fold(Seconds::ZERO, |acc, x| acc + x)
    }
}
