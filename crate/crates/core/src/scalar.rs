//! Scalar abstraction shared by every probability computation in the crate.
//!
//! The engine only ever needs field arithmetic (products of kernel entries,
//! sums over atoms, ratios of masses), so it is written once against
//! [`Scalar`] and instantiated with `f64` for speed, `f32` for completeness,
//! and [`Exact`] (arbitrary-precision rationals) when a verdict must not
//! depend on rounding.

use std::fmt::{Debug, Display};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive, Zero};

/// Exact rational scalar.
pub type Exact = BigRational;

pub trait Scalar:
    Num
    + Signed
    + Clone
    + PartialOrd
    + Debug
    + Display
    + FromPrimitive
    + ToPrimitive
    + Send
    + Sync
    + 'static
{
    /// `num / den` in this scalar type. `den` must be nonzero.
    fn from_ratio(num: i64, den: i64) -> Self;

    /// Parses a decimal literal (`"0.3"`, `"-1.5e-2"`) or a fraction (`"2/3"`).
    fn parse_decimal(s: &str) -> Option<Self>;

    /// Sum that is exact for rationals and compensated for floats.
    fn sum_all<I: IntoIterator<Item = Self>>(iter: I) -> Self;

    /// True when the type performs exact arithmetic.
    fn is_exact() -> bool {
        false
    }

    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite value")
    }

    /// `|self - other| <= tol`, evaluated in the scalar's own arithmetic.
    fn close_to(&self, other: &Self, tol: f64) -> bool {
        let diff = (self.clone() - other.clone()).abs();
        if Self::is_exact() && diff.is_zero() {
            return true;
        }
        diff.as_f64() <= tol
    }
}

// Neumaier's variant of Kahan summation.
fn compensated_sum<T, I>(iter: I) -> T
where
    T: num_traits::Float,
    I: IntoIterator<Item = T>,
{
    let mut sum = T::zero();
    let mut comp = T::zero();
    for v in iter {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp = comp + ((sum - t) + v);
        } else {
            comp = comp + ((v - t) + sum);
        }
        sum = t;
    }
    sum + comp
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn from_ratio(num: i64, den: i64) -> Self {
                (num as f64 / den as f64) as $t
            }

            fn parse_decimal(s: &str) -> Option<Self> {
                let s = s.trim();
                if let Some((n, d)) = s.split_once('/') {
                    let n: f64 = n.trim().parse().ok()?;
                    let d: f64 = d.trim().parse().ok()?;
                    if d == 0.0 {
                        return None;
                    }
                    return Some((n / d) as $t);
                }
                let v: $t = s.parse().ok()?;
                v.is_finite().then_some(v)
            }

            fn sum_all<I: IntoIterator<Item = Self>>(iter: I) -> Self {
                compensated_sum(iter)
            }
        }
    };
}

float_scalar!(f64);
float_scalar!(f32);

impl Scalar for BigRational {
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = parse_decimal_exact(n.trim())?;
            let d = parse_decimal_exact(d.trim())?;
            if d.is_zero() {
                return None;
            }
            return Some(n / d);
        }
        parse_decimal_exact(s)
    }

    fn sum_all<I: IntoIterator<Item = Self>>(iter: I) -> Self {
        iter.into_iter().fold(BigRational::zero(), |acc, v| acc + v)
    }

    fn is_exact() -> bool {
        true
    }
}

fn parse_decimal_exact(s: &str) -> Option<BigRational> {
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => (&s[..pos], s[pos + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.as_bytes().first()? {
        b'-' => (true, &mantissa[1..]),
        b'+' => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all_digits = format!("{int_part}{frac_part}");
    let numer: BigInt = if all_digits.is_empty() {
        BigInt::zero()
    } else {
        all_digits.parse().ok()?
    };
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = BigRational::from_integer(numer);
    if scale >= 0 {
        value *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    if negative {
        value = -value;
    }
    Some(value)
}

/// Product of factors; switches to log-domain accumulation past 32 factors for
/// floating types so long products cannot underflow before the final ratio.
pub fn product<S: Scalar>(factors: &[S]) -> S {
    if S::is_exact() || factors.len() <= 32 {
        return factors.iter().fold(S::one(), |acc, f| acc * f.clone());
    }
    if factors.iter().any(|f| f.is_zero()) {
        return S::zero();
    }
    let negative = factors.iter().filter(|f| f.is_negative()).count() % 2 == 1;
    let log_sum: f64 = factors.iter().map(|f| f.as_f64().abs().ln()).sum();
    let magnitude = S::from_f64_lossy(log_sum.exp());
    if negative {
        -magnitude
    } else {
        magnitude
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_decimal_parsing() {
        assert_eq!(Exact::parse_decimal("0.3"), Some(Exact::from_ratio(3, 10)));
        assert_eq!(Exact::parse_decimal("-1.25e-1"), Some(Exact::from_ratio(-1, 8)));
        assert_eq!(Exact::parse_decimal("2/3"), Some(Exact::from_ratio(2, 3)));
        assert_eq!(Exact::parse_decimal("5"), Some(Exact::from_ratio(5, 1)));
        assert_eq!(Exact::parse_decimal(".5"), Some(Exact::from_ratio(1, 2)));
        assert!(Exact::parse_decimal("abc").is_none());
        assert!(Exact::parse_decimal("1/0").is_none());
        assert!(Exact::parse_decimal("").is_none());
    }

    #[test]
    fn float_parsing_rejects_non_finite() {
        assert_eq!(f64::parse_decimal("0.25"), Some(0.25));
        assert!(f64::parse_decimal("inf").is_none());
        assert_eq!(f32::parse_decimal("1/4"), Some(0.25));
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut v = vec![1.0f64];
        v.extend(std::iter::repeat(1e-16).take(10_000));
        let s = f64::sum_all(v);
        assert!((s - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn long_product_does_not_underflow_early() {
        let factors = vec![1e-20f64; 40];
        let p = product(&factors);
        assert_eq!(p, 0.0); // 1e-800 is genuinely below f64 range
        let mut factors = vec![1e-20f64; 20];
        factors.extend(vec![1e20f64; 20]);
        assert!((product(&factors) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_close_to_is_equality_at_zero_tolerance() {
        let a = Exact::from_ratio(1, 3);
        let b = Exact::from_ratio(2, 6);
        assert!(a.close_to(&b, 0.0));
        assert!(!a.close_to(&Exact::from_ratio(1, 4), 0.0));
    }
}
