//! Exact rational arithmetic for metric values.
//!
//! Percentages and rates are carried as reduced fractions so that repeated
//! runs render identical digits. Conversion to text happens once, at the
//! reporting edge, with half-up rounding to two decimals.

use std::cmp::Ordering;
use std::fmt;

/// A reduced fraction with a positive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    num: i128,
    den: i128,
}

impl Rational {
    pub fn new(num: i128, den: i128) -> Self {
        assert!(den != 0, "zero denominator");
        let sign = if den < 0 { -1 } else { 1 };
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i128;
        Rational {
            num: sign * num / g,
            den: sign * den / g,
        }
    }

    pub fn zero() -> Self {
        Rational { num: 0, den: 1 }
    }

    pub fn from_int(n: i128) -> Self {
        Rational { num: n, den: 1 }
    }

    pub fn numer(&self) -> i128 {
        self.num
    }

    pub fn denom(&self) -> i128 {
        self.den
    }

    pub fn add(&self, other: &Rational) -> Rational {
        Rational::new(self.num * other.den + other.num * self.den, self.den * other.den)
    }

    pub fn sub(&self, other: &Rational) -> Rational {
        Rational::new(self.num * other.den - other.num * self.den, self.den * other.den)
    }

    pub fn mul(&self, other: &Rational) -> Rational {
        Rational::new(self.num * other.num, self.den * other.den)
    }

    pub fn scale(&self, k: i128) -> Rational {
        Rational::new(self.num * k, self.den)
    }

    pub fn abs(&self) -> Rational {
        Rational {
            num: self.num.abs(),
            den: self.den,
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Render with exactly two decimal places, rounding half away from zero.
    ///
    /// The rounding is done in integer arithmetic so the digits never depend
    /// on platform float behaviour.
    pub fn render_2dp(&self) -> String {
        let scaled_num = self.num * 200;
        let scaled_den = self.den * 2;
        let adjust = if scaled_num >= 0 { self.den } else { -self.den };
        let hundredths = (scaled_num + adjust) / scaled_den;
        let sign = if hundredths < 0 { "-" } else { "" };
        let h = hundredths.abs();
        format!("{}{}.{:02}", sign, h / 100, h % 100)
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render_2dp())
    }
}

fn gcd(a: u128, b: u128) -> u128 {
    if a == 0 && b == 0 {
        return 1;
    }
    let (mut a, mut b) = (a, b);
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}
