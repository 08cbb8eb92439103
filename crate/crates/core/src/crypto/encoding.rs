//! Fixed-point codec mapping reals onto the Paillier message space.
//!
//! A real `x` is represented as `mantissa * 16^exponent`. The default exponent
//! of `-16` gives 64 fractional bits. Negative mantissas live in the upper half
//! of `[0, n)` once mapped to a plaintext.

use std::cmp::Ordering;
use std::ops::{Add, Mul};

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{FromPrimitive, Signed, ToPrimitive, Zero};

use super::paillier::PublicKey;
use super::CryptoError;

/// Radix of the exponent.
pub const BASE: u32 = 16;
/// `log2(BASE)`.
pub const LOG2_BASE: i32 = 4;
/// Default exponent: 16 hex digits, i.e. 64 fractional bits.
pub const DEFAULT_EXPONENT: i32 = -16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedNumber {
    pub mantissa: BigInt,
    pub exponent: i32,
}

impl EncodedNumber {
    pub fn new(mantissa: BigInt, exponent: i32) -> Self {
        Self { mantissa, exponent }
    }

    /// Encodes `x` at the default precision.
    pub fn encode(x: f64) -> Result<Self, CryptoError> {
        Self::encode_with_exponent(x, DEFAULT_EXPONENT)
    }

    /// Encodes `x` as `round(x / 16^exponent) * 16^exponent`.
    pub fn encode_with_exponent(x: f64, exponent: i32) -> Result<Self, CryptoError> {
        if !x.is_finite() {
            return Err(CryptoError::NonFinite(x));
        }
        // Scaling by a power of two is exact unless it overflows.
        let scaled = scale_pow2(x, -exponent * LOG2_BASE);
        if !scaled.is_finite() {
            return Err(CryptoError::Overflow);
        }
        let mantissa = BigInt::from_f64(scaled.round()).ok_or(CryptoError::Overflow)?;
        Ok(Self { mantissa, exponent })
    }

    pub fn decode(&self) -> f64 {
        // Shift large mantissas down first so to_f64 does not saturate.
        let bits = self.mantissa.bits() as i64;
        let excess = (bits - 1000).max(0);
        let (m, shift) = if excess > 0 {
            (&self.mantissa >> excess as usize, excess as i32)
        } else {
            (self.mantissa.clone(), 0)
        };
        let head = m.to_f64().unwrap_or(f64::NAN);
        scale_pow2(head, self.exponent * LOG2_BASE + shift)
    }

    /// Rescales to a lower exponent without losing mantissa bits.
    pub fn decrease_exponent_to(&self, exponent: i32) -> Result<Self, CryptoError> {
        match exponent.cmp(&self.exponent) {
            Ordering::Greater => Err(CryptoError::ExponentIncrease {
                from: self.exponent,
                to: exponent,
            }),
            Ordering::Equal => Ok(self.clone()),
            Ordering::Less => {
                let factor = base_pow((self.exponent - exponent) as u32);
                Ok(Self {
                    mantissa: &self.mantissa * BigInt::from(factor),
                    exponent,
                })
            }
        }
    }

    /// Maps the mantissa into `[0, n)`, negative values wrapping to the upper half.
    pub fn to_plaintext(&self, key: &PublicKey) -> Result<BigUint, CryptoError> {
        let magnitude = self.mantissa.magnitude();
        if magnitude >= key.half_n() {
            return Err(CryptoError::Overflow);
        }
        Ok(match self.mantissa.sign() {
            Sign::Minus => key.n() - magnitude,
            _ => magnitude.clone(),
        })
    }

    /// Inverse of [`to_plaintext`](Self::to_plaintext).
    pub fn from_plaintext(plaintext: &BigUint, exponent: i32, key: &PublicKey) -> Self {
        let mantissa = if plaintext >= key.half_n() {
            -BigInt::from(key.n() - plaintext)
        } else {
            BigInt::from(plaintext.clone())
        };
        Self { mantissa, exponent }
    }

    pub fn is_negative(&self) -> bool {
        self.mantissa.is_negative()
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }
}

impl Add for &EncodedNumber {
    type Output = EncodedNumber;

    fn add(self, rhs: &EncodedNumber) -> EncodedNumber {
        let exponent = self.exponent.min(rhs.exponent);
        // Decreasing an exponent cannot fail.
        let a = self.decrease_exponent_to(exponent).expect("lower exponent");
        let b = rhs.decrease_exponent_to(exponent).expect("lower exponent");
        EncodedNumber {
            mantissa: a.mantissa + b.mantissa,
            exponent,
        }
    }
}

impl Mul for &EncodedNumber {
    type Output = EncodedNumber;

    fn mul(self, rhs: &EncodedNumber) -> EncodedNumber {
        EncodedNumber {
            mantissa: &self.mantissa * &rhs.mantissa,
            exponent: self.exponent + rhs.exponent,
        }
    }
}

pub(crate) fn base_pow(k: u32) -> BigUint {
    BigUint::from(1u8) << (k as usize * LOG2_BASE as usize)
}

/// `x * 2^k`, splitting the scale so intermediate factors stay finite.
fn scale_pow2(x: f64, k: i32) -> f64 {
    let mut out = x;
    let mut rest = k;
    while rest != 0 {
        let step = rest.clamp(-1000, 1000);
        out *= 2f64.powi(step);
        rest -= step;
    }
    out
}
