//! Exact dyadic rationals `m·2^e`.
//!
//! Every constant of the Cantor constructions (radii, centers, widths chosen
//! by the tuner) is dyadic once β is an integer, so containment and volume
//! questions are decided here without any tolerance.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// `mantissa · 2^exponent`, canonical: mantissa odd, or zero with exponent 0.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Dyadic {
    mantissa: BigInt,
    exponent: i64,
}

impl Dyadic {
    pub fn new(mantissa: impl Into<BigInt>, exponent: i64) -> Self {
        let mut m: BigInt = mantissa.into();
        let mut e = exponent;
        if m.is_zero() {
            return Self::zero();
        }
        let tz = m.trailing_zeros().unwrap_or(0);
        if tz > 0 {
            m >>= tz;
            e += tz as i64;
        }
        Dyadic { mantissa: m, exponent: e }
    }

    pub fn zero() -> Self {
        Dyadic { mantissa: BigInt::zero(), exponent: 0 }
    }

    pub fn one() -> Self {
        Dyadic { mantissa: BigInt::one(), exponent: 0 }
    }

    pub fn int(v: i64) -> Self {
        Self::new(v, 0)
    }

    /// `2^e`.
    pub fn pow2(e: i64) -> Self {
        Dyadic { mantissa: BigInt::one(), exponent: e }
    }

    /// `num / 2^k`, e.g. `frac(17, 5)` is 17/32.
    pub fn frac(num: i64, k: i64) -> Self {
        Self::new(num, -k)
    }

    pub fn mantissa(&self) -> &BigInt {
        &self.mantissa
    }

    pub fn exponent(&self) -> i64 {
        self.exponent
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    pub fn is_positive(&self) -> bool {
        self.mantissa.is_positive()
    }

    pub fn is_negative(&self) -> bool {
        self.mantissa.is_negative()
    }

    pub fn abs(&self) -> Self {
        Dyadic { mantissa: self.mantissa.abs(), exponent: self.exponent }
    }

    /// Multiply by `2^k` (exact, k may be negative).
    pub fn shl(&self, k: i64) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        Dyadic { mantissa: self.mantissa.clone(), exponent: self.exponent + k }
    }

    pub fn half(&self) -> Self {
        self.shl(-1)
    }

    pub fn powi(&self, k: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Nearest-below-or-equal float; exact whenever the value fits in 53 bits.
    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let bits = self.mantissa.bits() as i64;
        let (m, e) = if bits > 62 {
            let s = bits - 62;
            (&self.mantissa >> (s as usize), self.exponent + s)
        } else {
            (self.mantissa.clone(), self.exponent)
        };
        ldexp(m.to_i64().expect("fits after shift") as f64, e)
    }

    /// Exact conversion of a finite float.
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite(), "non-finite float has no dyadic value");
        if x == 0.0 {
            return Self::zero();
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1i64 } else { 1 };
        let exp_bits = ((bits >> 52) & 0x7ff) as i64;
        let frac = (bits & ((1u64 << 52) - 1)) as i64;
        let (m, e) = if exp_bits == 0 { (frac, -1074) } else { (frac | (1i64 << 52), exp_bits - 1075) };
        Self::new(sign * m, e)
    }

    /// Reduced fraction `p/q` with `q` a power of two, for reports.
    pub fn to_fraction_string(&self) -> String {
        if self.exponent >= 0 {
            format!("{}", &self.mantissa << (self.exponent as usize))
        } else {
            format!("{}/2^{}", self.mantissa, -self.exponent)
        }
    }

    fn align(a: &Self, b: &Self) -> (BigInt, BigInt, i64) {
        if a.is_zero() {
            return (BigInt::zero(), b.mantissa.clone(), b.exponent);
        }
        if b.is_zero() {
            return (a.mantissa.clone(), BigInt::zero(), a.exponent);
        }
        let e = a.exponent.min(b.exponent);
        let ma = &a.mantissa << ((a.exponent - e) as usize);
        let mb = &b.mantissa << ((b.exponent - e) as usize);
        (ma, mb, e)
    }
}

/// `m · 2^e` without intermediate overflow or premature underflow.
pub fn ldexp(m: f64, e: i64) -> f64 {
    let mut x = m;
    let mut e = e;
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e as i32)
}

impl Default for Dyadic {
    fn default() -> Self {
        Self::zero()
    }
}

impl fmt::Debug for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_fraction_string())
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_fraction_string())
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b, _) = Dyadic::align(self, other);
        a.cmp(&b)
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Add for &Dyadic {
    type Output = Dyadic;
    fn add(self, rhs: &Dyadic) -> Dyadic {
        let (a, b, e) = Dyadic::align(self, rhs);
        Dyadic::new(a + b, e)
    }
}

impl Sub for &Dyadic {
    type Output = Dyadic;
    fn sub(self, rhs: &Dyadic) -> Dyadic {
        let (a, b, e) = Dyadic::align(self, rhs);
        Dyadic::new(a - b, e)
    }
}

impl Mul for &Dyadic {
    type Output = Dyadic;
    fn mul(self, rhs: &Dyadic) -> Dyadic {
        if self.is_zero() || rhs.is_zero() {
            return Dyadic::zero();
        }
        // product of odd mantissas is odd, so already canonical
        Dyadic { mantissa: &self.mantissa * &rhs.mantissa, exponent: self.exponent + rhs.exponent }
    }
}

impl Neg for &Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        Dyadic { mantissa: -&self.mantissa, exponent: self.exponent }
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Dyadic {
            type Output = Dyadic;
            fn $m(self, rhs: Dyadic) -> Dyadic {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Dyadic> for Dyadic {
            type Output = Dyadic;
            fn $m(self, rhs: &Dyadic) -> Dyadic {
                (&self).$m(rhs)
            }
        }
        impl $tr<Dyadic> for &Dyadic {
            type Output = Dyadic;
            fn $m(self, rhs: Dyadic) -> Dyadic {
                self.$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        -&self
    }
}

impl std::iter::Sum for Dyadic {
    fn sum<I: Iterator<Item = Dyadic>>(iter: I) -> Dyadic {
        iter.fold(Dyadic::zero(), |a, b| a + b)
    }
}

impl serde::Serialize for Dyadic {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_fraction_string())
    }
}

/// `true` iff the canonical-form invariant holds; exposed for property tests.
pub fn is_canonical(d: &Dyadic) -> bool {
    if d.mantissa.is_zero() {
        d.exponent == 0
    } else {
        d.mantissa.is_odd()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(m: i64, e: i64) -> Dyadic {
        Dyadic::new(m, e)
    }

    #[test]
    fn canonical_form_strips_twos() {
        let x = d(12, 0);
        assert_eq!(x.mantissa(), &BigInt::from(3));
        assert_eq!(x.exponent(), 2);
        assert!(is_canonical(&d(0, 17)));
        assert_eq!(d(0, 17), Dyadic::zero());
    }

    #[test]
    fn small_arithmetic() {
        assert_eq!(d(1, -1) + d(1, -2), d(3, -2));
        assert_eq!(d(17, -5).to_f64(), 17.0 / 32.0);
        assert_eq!(d(1, -1) * d(1, -1), d(1, -2));
        assert!(d(1, -10) < d(1, -9));
        assert_eq!(Dyadic::from_f64(0.15625), d(5, -5));
    }

    #[test]
    fn huge_exponents_convert() {
        assert_eq!(Dyadic::pow2(-1074).to_f64(), f64::from_bits(1));
        let big = Dyadic::one() + Dyadic::pow2(-200);
        assert_eq!(big.to_f64(), 1.0);
    }

    proptest! {
        #[test]
        fn ring_laws_match_f64(a in -1_000_000i64..1_000_000, ea in -30i64..30,
                               b in -1_000_000i64..1_000_000, eb in -30i64..30) {
            let x = d(a, ea);
            let y = d(b, eb);
            // all these values are exact in f64
            prop_assert_eq!((&x + &y).to_f64(), x.to_f64() + y.to_f64());
            prop_assert_eq!((&x - &y).to_f64(), x.to_f64() - y.to_f64());
            prop_assert_eq!((&x * &y).to_f64(), x.to_f64() * y.to_f64());
            prop_assert_eq!(x.cmp(&y), x.to_f64().partial_cmp(&y.to_f64()).unwrap());
            prop_assert!(is_canonical(&(&x + &y)));
            prop_assert!(is_canonical(&(&x * &y)));
            prop_assert_eq!(Dyadic::from_f64(x.to_f64()), x.clone());
            prop_assert_eq!(x.clone().min(y.clone()).to_f64(), x.to_f64().min(y.to_f64()));
            prop_assert_eq!(x.clone().max(y.clone()).to_f64(), x.to_f64().max(y.to_f64()));
        }
    }
}
