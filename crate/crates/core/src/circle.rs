//! Points of the unit circle measured in turns.
//!
//! `RationalAngle` is exact. `FixedPointAngle` keeps `bits` bits of the turn
//! fraction, and multiplying it by an integer is exact modulo one, so orbits of
//! `x -> a x` never lose digits. `LogPolar` carries long products of factors of
//! modulus at most one without underflow and with an unwrapped argument.

use crate::error::{invalid, Error, Result};
use num_bigint::{BigInt, BigUint, Sign};
use num_complex::Complex64;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::OnceLock;

pub const DEFAULT_PRECISION: u32 = 1024;
/// Environment variable overriding [`DEFAULT_PRECISION`].
pub const PRECISION_ENV: &str = "IPERGO_PRECISION";

pub fn default_precision() -> u32 {
    static P: OnceLock<u32> = OnceLock::new();
    *P.get_or_init(|| {
        std::env::var(PRECISION_ENV)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .filter(|&p: &u32| p >= 128)
            .unwrap_or(DEFAULT_PRECISION)
    })
}

/// `x * 2^e` without intermediate overflow or underflow.
pub(crate) fn ldexp(x: f64, e: i64) -> f64 {
    let mut v = x;
    let mut e = e;
    while e > 1000 {
        v *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        v *= 2f64.powi(-1000);
        e += 1000;
    }
    v * 2f64.powi(e as i32)
}

/// `x / 2^bits` as a float, keeping the top 64 significant bits of `x`.
pub(crate) fn big_ratio_f64(x: &BigUint, bits: u32) -> f64 {
    let nb = x.bits();
    if nb == 0 {
        return 0.0;
    }
    let shift = nb.saturating_sub(64);
    let top = (x >> shift).to_u64().unwrap_or(u64::MAX) as f64;
    ldexp(top, shift as i64 - bits as i64)
}

fn pow2(bits: u32) -> BigUint {
    BigUint::one() << bits
}

fn mask_bits(x: BigUint, bits: u32) -> BigUint {
    if x.bits() <= bits as u64 {
        x
    } else {
        x & (pow2(bits) - 1u32)
    }
}

/// `e^{2 pi i num/den}`, kept reduced with `0 <= num < den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RationalAngle {
    num: u64,
    den: u64,
}

impl RationalAngle {
    pub fn new(num: i64, den: u64) -> Result<Self> {
        if den == 0 {
            return invalid("rational angle with zero denominator");
        }
        let r = (num as i128).rem_euclid(den as i128) as u64;
        Ok(Self::reduced(r, den))
    }

    fn reduced(num: u64, den: u64) -> Self {
        let num = num % den;
        if num == 0 {
            return Self { num: 0, den: 1 };
        }
        let g = num.gcd(&den);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn zero() -> Self {
        Self { num: 0, den: 1 }
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn pow(&self, n: &BigUint) -> Self {
        let r = (n % self.den).to_u64().unwrap_or(0);
        Self::reduced(((r as u128 * self.num as u128) % self.den as u128) as u64, self.den)
    }

    pub fn pow_u64(&self, n: u64) -> Self {
        Self::reduced(
            ((n as u128 % self.den as u128) * self.num as u128 % self.den as u128) as u64,
            self.den,
        )
    }

    pub fn scale(&self, n: &BigInt) -> Self {
        let d = BigInt::from(self.den);
        let r = n.mod_floor(&d).to_u64().unwrap_or(0);
        Self::reduced(((r as u128 * self.num as u128) % self.den as u128) as u64, self.den)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let l = (self.den as u128).lcm(&(other.den as u128));
        if l > u64::MAX as u128 {
            return invalid("sum of rational angles overflows the denominator range");
        }
        let a = self.num as u128 * (l / self.den as u128);
        let b = other.num as u128 * (l / other.den as u128);
        Ok(Self::reduced(((a + b) % l) as u64, l as u64))
    }

    pub fn neg(&self) -> Self {
        Self::reduced(self.den - self.num, self.den)
    }

    pub fn turns(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Top 64 bits of the turn fraction, rounded down.
    pub fn phase_u64(&self) -> u64 {
        (((self.num as u128) << 64) / self.den as u128) as u64
    }

    pub fn to_fixed(&self, bits: u32) -> FixedPointAngle {
        let frac = (BigUint::from(self.num) << bits) / self.den;
        FixedPointAngle { frac, bits }
    }
}

impl fmt::Display for RationalAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// A turn fraction `frac / 2^bits`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FixedPointAngle {
    frac: BigUint,
    bits: u32,
}

impl FixedPointAngle {
    pub fn from_frac(frac: BigUint, bits: u32) -> Result<Self> {
        if bits < 64 {
            return invalid("fixed-point precision must be at least 64 bits");
        }
        if frac.bits() > bits as u64 {
            return invalid("fixed-point fraction must be below one turn");
        }
        Ok(Self { frac, bits })
    }

    pub fn zero(bits: u32) -> Self {
        Self {
            frac: BigUint::zero(),
            bits,
        }
    }

    /// `floor(num/den * 2^bits) mod 2^bits`.
    pub fn from_ratio(num: &BigUint, den: &BigUint, bits: u32) -> Result<Self> {
        if den.is_zero() {
            return invalid("fixed-point ratio with zero denominator");
        }
        let frac = mask_bits((num << bits) / den, bits);
        Self::from_frac(frac, bits)
    }

    /// `(sqrt(5) - 1) / 2` turns.
    pub fn golden(bits: u32) -> Self {
        let five = BigUint::from(5u32) << (2 * bits);
        let frac = (five.sqrt() - pow2(bits)) >> 1;
        Self { frac, bits }
    }

    /// `sqrt(2) - 1` turns.
    pub fn sqrt2_minus_1(bits: u32) -> Self {
        let two = BigUint::from(2u32) << (2 * bits);
        Self {
            frac: two.sqrt() - pow2(bits),
            bits,
        }
    }

    /// The point `e^{i num/den}`, i.e. `num/(2 pi den)` turns.
    pub fn from_radians(num: i64, den: u64, bits: u32) -> Result<Self> {
        if den == 0 {
            return invalid("radian angle with zero denominator");
        }
        let guard = bits + 64;
        let pi = pi_fixed(guard);
        let n = BigUint::from(num.unsigned_abs());
        let frac = mask_bits((n << (bits + guard)) / (pi * (2 * den)), bits);
        let a = Self { frac, bits };
        Ok(if num < 0 { a.neg() } else { a })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn frac(&self) -> &BigUint {
        &self.frac
    }

    pub fn is_zero(&self) -> bool {
        self.frac.is_zero()
    }

    /// `n * frac mod 2^bits`, exact.
    pub fn pow(&self, n: &BigUint) -> Self {
        Self {
            frac: mask_bits(&self.frac * n, self.bits),
            bits: self.bits,
        }
    }

    pub fn scale(&self, n: &BigInt) -> Self {
        let p = self.pow(n.magnitude());
        if n.sign() == Sign::Minus {
            p.neg()
        } else {
            p
        }
    }

    pub fn neg(&self) -> Self {
        if self.frac.is_zero() {
            return self.clone();
        }
        Self {
            frac: pow2(self.bits) - &self.frac,
            bits: self.bits,
        }
    }

    /// Changes precision, truncating or zero-extending the fraction.
    pub fn with_bits(&self, bits: u32) -> Self {
        let frac = if bits >= self.bits {
            &self.frac << (bits - self.bits)
        } else {
            &self.frac >> (self.bits - bits)
        };
        Self { frac, bits }
    }

    pub fn add(&self, other: &Self) -> Self {
        let bits = self.bits.max(other.bits);
        let a = self.with_bits(bits);
        let b = other.with_bits(bits);
        Self {
            frac: mask_bits(a.frac + b.frac, bits),
            bits,
        }
    }

    pub fn top_u64(&self) -> u64 {
        (&self.frac >> (self.bits - 64)).to_u64().unwrap_or(0)
    }

    pub fn top_u128(&self) -> u128 {
        if self.bits >= 128 {
            (&self.frac >> (self.bits - 128)).to_u128().unwrap_or(0)
        } else {
            (&self.frac << (128 - self.bits)).to_u128().unwrap_or(0)
        }
    }

    pub fn turns(&self) -> f64 {
        big_ratio_f64(&self.frac, self.bits)
    }

    pub fn to_hex(&self) -> String {
        self.frac.to_str_radix(16)
    }

    pub fn from_hex(hex: &str, bits: u32) -> Result<Self> {
        let h = hex.trim().trim_start_matches("0x");
        let frac = BigUint::parse_bytes(h.as_bytes(), 16)
            .ok_or_else(|| Error::InvalidInput(format!("bad hex fraction {hex:?}")))?;
        Self::from_frac(frac, bits)
    }

    /// Smallest-denominator rational `p/q` with `q <= 2^max_den_bits` lying within
    /// `2^-tol_bits` of this angle, found among the continued-fraction convergents.
    pub fn rational_approximation(&self, max_den_bits: u32, tol_bits: u32) -> Option<(BigUint, BigUint)> {
        let one = pow2(self.bits);
        let qmax = pow2(max_den_bits);
        let (mut a, mut b) = (self.frac.clone(), one.clone());
        let (mut h0, mut h1) = (BigUint::zero(), BigUint::one());
        let (mut k0, mut k1) = (BigUint::one(), BigUint::zero());
        while !b.is_zero() {
            let (q, r) = a.div_rem(&b);
            let h2 = &q * &h1 + &h0;
            let k2 = &q * &k1 + &k0;
            if k2 > qmax {
                break;
            }
            // |frac/2^P - h/k| < 2^-tol  <=>  |frac*k - h*2^P| * 2^tol < k * 2^P
            let lhs = &self.frac * &k2;
            let rhs = &h2 * &one;
            let diff = if lhs >= rhs { lhs - rhs } else { rhs - lhs };
            if !k2.is_zero() && (diff << tol_bits) < &k2 * &one {
                return Some((h2, k2));
            }
            h0 = std::mem::replace(&mut h1, h2);
            k0 = std::mem::replace(&mut k1, k2);
            a = std::mem::replace(&mut b, r);
        }
        None
    }

    /// No rational with denominator at most `2^(P/8)` within `2^(-P/2)`.
    pub fn check_irrational(&self) -> Result<()> {
        match self.rational_approximation(self.bits / 8, self.bits / 2) {
            None => Ok(()),
            Some((p, q)) => Err(Error::NotIrrational {
                num: p.to_string(),
                den: q.to_string(),
            }),
        }
    }
}

/// `floor(pi * 2^bits)` up to a few units in the last place, via Machin's formula.
pub fn pi_fixed(bits: u32) -> BigUint {
    let guard = 32;
    let b = bits + guard;
    let atan_inv = |x: u64| -> BigInt {
        let x2 = BigInt::from(x * x);
        let mut term = (BigInt::one() << b) / x;
        let mut sum = BigInt::zero();
        let mut k = 0u64;
        while !term.is_zero() {
            let t = &term / (2 * k + 1);
            if k.is_multiple_of(2) {
                sum += t;
            } else {
                sum -= t;
            }
            term /= &x2;
            k += 1;
        }
        sum
    };
    let pi: BigInt = atan_inv(5) * 16 - atan_inv(239) * 4;
    (pi >> guard as usize).to_biguint().unwrap_or_default()
}

/// An angle of either kind. Serialized as `{"rational": [num, den]}` or
/// `{"fixed": "<hex>", "bits": P}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "AngleRepr", into = "AngleRepr")]
pub enum Angle {
    Rational(RationalAngle),
    Fixed(FixedPointAngle),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum AngleRepr {
    Rational { rational: (i64, u64) },
    Fixed { fixed: String, bits: u32 },
}

impl TryFrom<AngleRepr> for Angle {
    type Error = Error;
    fn try_from(r: AngleRepr) -> Result<Self> {
        match r {
            AngleRepr::Rational { rational: (n, d) } => Ok(Angle::Rational(RationalAngle::new(n, d)?)),
            AngleRepr::Fixed { fixed, bits } => Ok(Angle::Fixed(FixedPointAngle::from_hex(&fixed, bits)?)),
        }
    }
}

impl From<Angle> for AngleRepr {
    fn from(a: Angle) -> Self {
        match a {
            Angle::Rational(r) => AngleRepr::Rational {
                rational: (r.num as i64, r.den),
            },
            Angle::Fixed(f) => AngleRepr::Fixed {
                fixed: f.to_hex(),
                bits: f.bits,
            },
        }
    }
}

impl From<RationalAngle> for Angle {
    fn from(r: RationalAngle) -> Self {
        Angle::Rational(r)
    }
}

impl From<FixedPointAngle> for Angle {
    fn from(f: FixedPointAngle) -> Self {
        Angle::Fixed(f)
    }
}

impl Angle {
    pub fn rational(num: i64, den: u64) -> Result<Self> {
        Ok(Angle::Rational(RationalAngle::new(num, den)?))
    }

    pub fn zero() -> Self {
        Angle::Rational(RationalAngle::zero())
    }

    pub fn as_rational(&self) -> Option<RationalAngle> {
        match self {
            Angle::Rational(r) => Some(*r),
            Angle::Fixed(_) => None,
        }
    }

    pub fn precision(&self) -> Option<u32> {
        match self {
            Angle::Rational(_) => None,
            Angle::Fixed(f) => Some(f.bits),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Angle::Rational(r) => r.is_zero(),
            Angle::Fixed(f) => f.is_zero(),
        }
    }

    pub fn pow(&self, n: &BigUint) -> Self {
        match self {
            Angle::Rational(r) => Angle::Rational(r.pow(n)),
            Angle::Fixed(f) => Angle::Fixed(f.pow(n)),
        }
    }

    pub fn scale(&self, n: &BigInt) -> Self {
        match self {
            Angle::Rational(r) => Angle::Rational(r.scale(n)),
            Angle::Fixed(f) => Angle::Fixed(f.scale(n)),
        }
    }

    pub fn scale_i64(&self, n: i64) -> Self {
        self.scale(&BigInt::from(n))
    }

    pub fn neg(&self) -> Self {
        match self {
            Angle::Rational(r) => Angle::Rational(r.neg()),
            Angle::Fixed(f) => Angle::Fixed(f.neg()),
        }
    }

    /// Exact for two rationals; a fixed operand forces fixed-point at its precision.
    pub fn add(&self, other: &Angle) -> Result<Self> {
        Ok(match (self, other) {
            (Angle::Rational(a), Angle::Rational(b)) => Angle::Rational(a.add(b)?),
            (Angle::Fixed(a), Angle::Fixed(b)) => Angle::Fixed(a.add(b)),
            (Angle::Fixed(a), Angle::Rational(b)) | (Angle::Rational(b), Angle::Fixed(a)) => {
                Angle::Fixed(a.add(&b.to_fixed(a.bits)))
            }
        })
    }

    /// Turn fraction in `[0, 1)`.
    pub fn turns(&self) -> f64 {
        match self {
            Angle::Rational(r) => r.turns(),
            Angle::Fixed(f) => f.turns(),
        }
    }

    /// Argument in `(-pi, pi]`.
    pub fn arg(&self) -> f64 {
        let t = self.turns();
        if t > 0.5 {
            TAU * (t - 1.0)
        } else {
            TAU * t
        }
    }

    pub fn phase_u64(&self) -> u64 {
        match self {
            Angle::Rational(r) => r.phase_u64(),
            Angle::Fixed(f) => f.top_u64(),
        }
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::from_polar(1.0, TAU * self.turns())
    }
}

/// `a^n` for a point `a` of the circle.
pub fn angle_pow(a: &Angle, n: &BigUint) -> Angle {
    a.pow(n)
}

/// `exp(log_r) * e^{i arg_wrapped}`; `log_r = -inf` is the exact zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogPolar {
    log_r: f64,
    arg_wrapped: f64,
    arg_unwrapped: f64,
}

pub(crate) fn wrap_arg(x: f64) -> f64 {
    let mut y = x % TAU;
    if y <= -PI {
        y += TAU;
    } else if y > PI {
        y -= TAU;
    }
    y
}

impl LogPolar {
    pub const ONE: LogPolar = LogPolar {
        log_r: 0.0,
        arg_wrapped: 0.0,
        arg_unwrapped: 0.0,
    };
    pub const ZERO: LogPolar = LogPolar {
        log_r: f64::NEG_INFINITY,
        arg_wrapped: 0.0,
        arg_unwrapped: 0.0,
    };

    pub fn new(log_r: f64, arg: f64) -> Self {
        if log_r == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        Self {
            log_r,
            arg_wrapped: wrap_arg(arg),
            arg_unwrapped: arg,
        }
    }

    pub fn from_complex(z: Complex64) -> Self {
        if z == Complex64::new(0.0, 0.0) {
            return Self::ZERO;
        }
        Self::new(z.norm().ln(), z.arg())
    }

    pub fn log_r(&self) -> f64 {
        self.log_r
    }

    pub fn arg_wrapped(&self) -> f64 {
        self.arg_wrapped
    }

    pub fn arg_unwrapped(&self) -> f64 {
        self.arg_unwrapped
    }

    pub fn is_zero(&self) -> bool {
        self.log_r == f64::NEG_INFINITY
    }

    pub fn modulus(&self) -> f64 {
        self.log_r.exp()
    }

    pub fn to_complex(&self) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::from_polar(self.log_r.exp(), self.arg_wrapped)
    }

    pub fn mul(&self, other: &LogPolar) -> LogPolar {
        if self.is_zero() || other.is_zero() {
            return Self::ZERO;
        }
        LogPolar {
            log_r: self.log_r + other.log_r,
            arg_wrapped: wrap_arg(self.arg_wrapped + other.arg_wrapped),
            arg_unwrapped: self.arg_unwrapped + other.arg_unwrapped,
        }
    }

    pub fn conj(&self) -> LogPolar {
        LogPolar {
            log_r: self.log_r,
            arg_wrapped: if self.arg_wrapped == PI { PI } else { -self.arg_wrapped },
            arg_unwrapped: -self.arg_unwrapped,
        }
    }
}

pub fn logpolar_product<'a, I: IntoIterator<Item = &'a LogPolar>>(zs: I) -> LogPolar {
    let mut acc = LogPolar::ONE;
    for z in zs {
        if z.is_zero() {
            return LogPolar::ZERO;
        }
        acc = acc.mul(z);
    }
    acc
}

/// `(1 + a)/2 = cos(phi/2) e^{i phi/2}` with `phi = arg a` in `(-pi, pi]`.
///
/// The modulus is evaluated as `sin(pi * (1/2 - |t|))` with the distance to the
/// half turn formed exactly, so factors close to zero keep relative accuracy.
pub fn half_sum(a: &Angle) -> LogPolar {
    match a {
        Angle::Rational(r) => {
            let (num, den) = (r.num as i128, r.den as i128);
            if 2 * num == den {
                return LogPolar::ZERO;
            }
            let s = if 2 * num > den { num - den } else { num };
            let theta = PI * (s as f64 / den as f64);
            let d = (den - 2 * s.abs()) as f64 / (2 * den) as f64;
            LogPolar::new((PI * d).sin().ln(), theta)
        }
        Angle::Fixed(f) => {
            let half = pow2(f.bits - 1);
            if f.frac == half {
                return LogPolar::ZERO;
            }
            let (t, d, neg) = if f.frac < half {
                (big_ratio_f64(&f.frac, f.bits), &half - &f.frac, false)
            } else {
                (big_ratio_f64(&(pow2(f.bits) - &f.frac), f.bits), &f.frac - &half, true)
            };
            let theta = if neg { -PI * t } else { PI * t };
            let d = big_ratio_f64(&d, f.bits);
            LogPolar::new((PI * d).sin().ln(), theta)
        }
    }
}
