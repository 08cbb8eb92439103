//! Paillier cryptosystem with `g = n + 1`.

use std::fmt;
use std::sync::Arc;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;

use super::encoding::{base_pow, EncodedNumber};
use super::prime::random_prime;
use super::CryptoError;

pub const MIN_KEY_BITS: u64 = 512;

#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    half_n: BigUint,
}

impl PublicKey {
    pub fn from_modulus(n: BigUint) -> Result<Self, CryptoError> {
        if n.bits() < MIN_KEY_BITS || n.is_even() {
            return Err(CryptoError::InvalidKey(format!(
                "modulus of {} bits is not a valid Paillier modulus",
                n.bits()
            )));
        }
        let n_squared = &n * &n;
        let half_n = &n >> 1usize;
        Ok(Self {
            n,
            n_squared,
            half_n,
        })
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    /// Plaintexts at or above this value decode as negative.
    pub fn half_n(&self) -> &BigUint {
        &self.half_n
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    /// Big-endian bytes of `n`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.n.to_bytes_be()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        Self::from_modulus(BigUint::from_bytes_be(bytes))
    }

    /// `(1 + m n) r^n mod n^2` for raw plaintext `m` in `[0, n)`.
    fn raw_encrypt<R: Rng + ?Sized>(&self, m: &BigUint, rng: &mut R) -> BigUint {
        let r = loop {
            let r = rng.gen_biguint_below(&self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                break r;
            }
        };
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        (gm * r.modpow(&self.n, &self.n_squared)) % &self.n_squared
    }

    fn same_as(self: &Arc<Self>, other: &Arc<Self>) -> bool {
        Arc::ptr_eq(self, other) || self.n == other.n
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({} bits)", self.n.bits())
    }
}

pub struct PrivateKey {
    public: Arc<PublicKey>,
    lambda: BigUint,
    mu: BigUint,
}

impl PrivateKey {
    pub fn public_key(&self) -> &Arc<PublicKey> {
        &self.public
    }

    /// Big-endian bytes of the decryption exponent and normalizer. Exposed only
    /// so audits can scan transcripts for leaked key material.
    pub fn secret_bytes(&self) -> [Vec<u8>; 2] {
        [self.lambda.to_bytes_be(), self.mu.to_bytes_be()]
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PrivateKey").finish_non_exhaustive()
    }
}

#[derive(Debug)]
pub struct KeyPair {
    pub public: Arc<PublicKey>,
    pub private: PrivateKey,
}

/// Generates a key pair whose modulus has exactly `bits` bits.
pub fn keygen<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> Result<KeyPair, CryptoError> {
    if bits < MIN_KEY_BITS || !bits.is_multiple_of(2) {
        return Err(CryptoError::KeySize(bits));
    }
    loop {
        let p = random_prime(bits / 2, rng);
        let q = random_prime(bits / 2, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        let one = BigUint::one();
        let phi = (&p - &one) * (&q - &one);
        if !n.gcd(&phi).is_one() || n.bits() != bits {
            continue;
        }
        let lambda = (&p - &one).lcm(&(&q - &one));
        // With g = n + 1, L(g^lambda mod n^2) = lambda mod n.
        let Some(mu) = (&lambda % &n).modinv(&n) else {
            continue;
        };
        let public = Arc::new(PublicKey::from_modulus(n)?);
        return Ok(KeyPair {
            private: PrivateKey {
                public: Arc::clone(&public),
                lambda,
                mu,
            },
            public,
        });
    }
}

/// An encrypted fixed-point number.
#[derive(Clone)]
pub struct Ciphertext {
    value: BigUint,
    exponent: i32,
    key: Arc<PublicKey>,
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    pub fn public_key(&self) -> &Arc<PublicKey> {
        &self.key
    }

    /// `(big-endian value bytes, exponent)`.
    pub fn to_wire(&self) -> (Vec<u8>, i32) {
        (self.value.to_bytes_be(), self.exponent)
    }

    pub fn from_wire(
        bytes: &[u8],
        exponent: i32,
        key: &Arc<PublicKey>,
    ) -> Result<Self, CryptoError> {
        let value = BigUint::from_bytes_be(bytes);
        if value >= key.n_squared {
            return Err(CryptoError::InvalidCiphertext);
        }
        Ok(Self {
            value,
            exponent,
            key: Arc::clone(key),
        })
    }

    /// `1` encrypts zero with `r = 1`; only used as the empty-sum identity.
    pub(crate) fn trivial_zero(key: &Arc<PublicKey>, exponent: i32) -> Self {
        Self {
            value: BigUint::one(),
            exponent,
            key: Arc::clone(key),
        }
    }

    /// Same plaintext at a lower exponent: `c^(16^k)` multiplies the mantissa by `16^k`.
    pub fn decrease_exponent_to(&self, exponent: i32) -> Result<Self, CryptoError> {
        if exponent > self.exponent {
            return Err(CryptoError::ExponentIncrease {
                from: self.exponent,
                to: exponent,
            });
        }
        if exponent == self.exponent {
            return Ok(self.clone());
        }
        let factor = base_pow((self.exponent - exponent) as u32);
        Ok(Self {
            value: self.value.modpow(&factor, &self.key.n_squared),
            exponent,
            key: Arc::clone(&self.key),
        })
    }
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Ciphertext({} bits, exponent {})",
            self.value.bits(),
            self.exponent
        )
    }
}

pub fn encrypt<R: Rng + ?Sized>(
    key: &Arc<PublicKey>,
    x: f64,
    rng: &mut R,
) -> Result<Ciphertext, CryptoError> {
    encrypt_encoded(key, &EncodedNumber::encode(x)?, rng)
}

pub fn encrypt_encoded<R: Rng + ?Sized>(
    key: &Arc<PublicKey>,
    x: &EncodedNumber,
    rng: &mut R,
) -> Result<Ciphertext, CryptoError> {
    let m = x.to_plaintext(key)?;
    Ok(Ciphertext {
        value: key.raw_encrypt(&m, rng),
        exponent: x.exponent,
        key: Arc::clone(key),
    })
}

/// Homomorphic addition; the operand with the higher exponent is rescaled down.
pub fn ct_add(a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, CryptoError> {
    if !a.key.same_as(&b.key) {
        return Err(CryptoError::KeyMismatch);
    }
    let exponent = a.exponent.min(b.exponent);
    let a = a.decrease_exponent_to(exponent)?;
    let b = b.decrease_exponent_to(exponent)?;
    Ok(Ciphertext {
        value: (&a.value * &b.value) % &a.key.n_squared,
        exponent,
        key: a.key,
    })
}

/// Multiplies the encrypted value by the plaintext `k`.
pub fn ct_scalar_mul(a: &Ciphertext, k: f64) -> Result<Ciphertext, CryptoError> {
    ct_scalar_mul_encoded(a, &EncodedNumber::encode(k)?)
}

pub fn ct_scalar_mul_encoded(a: &Ciphertext, k: &EncodedNumber) -> Result<Ciphertext, CryptoError> {
    let key = &a.key;
    let magnitude = k.mantissa.magnitude();
    if magnitude >= key.half_n() {
        return Err(CryptoError::Overflow);
    }
    let base = if k.is_negative() {
        // c^(-|k|) = (c^-1)^|k|, cheaper than raising to n - |k|.
        a.value
            .modinv(&key.n_squared)
            .ok_or(CryptoError::InvalidCiphertext)?
    } else {
        a.value.clone()
    };
    Ok(Ciphertext {
        value: base.modpow(magnitude, &key.n_squared),
        exponent: a.exponent + k.exponent,
        key: Arc::clone(key),
    })
}

/// Sum of many ciphertexts, aligned once to the smallest exponent.
pub fn ct_sum<'a, I>(items: I) -> Result<Option<Ciphertext>, CryptoError>
where
    I: IntoIterator<Item = &'a Ciphertext>,
{
    let mut acc: Option<Ciphertext> = None;
    for c in items {
        acc = Some(match acc {
            None => c.clone(),
            Some(sum) => ct_add(&sum, c)?,
        });
    }
    Ok(acc)
}

pub fn decrypt(key: &PrivateKey, a: &Ciphertext) -> Result<f64, CryptoError> {
    Ok(decrypt_encoded(key, a)?.decode())
}

pub fn decrypt_encoded(key: &PrivateKey, a: &Ciphertext) -> Result<EncodedNumber, CryptoError> {
    if !key.public.same_as(&a.key) {
        return Err(CryptoError::KeyMismatch);
    }
    let pk = &key.public;
    let u = a.value.modpow(&key.lambda, &pk.n_squared);
    let l = (u - BigUint::one()) / &pk.n;
    let m = (l * &key.mu) % &pk.n;
    Ok(EncodedNumber::from_plaintext(&m, a.exponent, pk))
}
