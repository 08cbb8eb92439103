//! Additively homomorphic encryption over fixed-point reals.
//!
//! Any party holding the [`PublicKey`] can encrypt, add ciphertexts and scale
//! them by plaintext reals; only the [`PrivateKey`] holder can decrypt.

mod encoding;
mod paillier;
mod prime;

pub use encoding::{EncodedNumber, BASE, DEFAULT_EXPONENT, LOG2_BASE};
pub use paillier::{
    ct_add, ct_scalar_mul, ct_scalar_mul_encoded, ct_sum, decrypt, decrypt_encoded, encrypt,
    encrypt_encoded, keygen, Ciphertext, KeyPair, PrivateKey, PublicKey, MIN_KEY_BITS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("key size {0} rejected: need an even bit count of at least 512")]
    KeySize(u64),
    #[error("invalid public key: {0}")]
    InvalidKey(String),
    #[error("ciphertext is not an element of Z*_(n^2)")]
    InvalidCiphertext,
    #[error("operands were encrypted under different public keys")]
    KeyMismatch,
    #[error("encoded value exceeds the plaintext space")]
    Overflow,
    #[error("cannot encode non-finite value {0}")]
    NonFinite(f64),
    #[error("cannot raise exponent from {from} to {to} without losing precision")]
    ExponentIncrease { from: i32, to: i32 },
}
