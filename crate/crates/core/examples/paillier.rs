//! Encrypt two reals, add them and scale by a plaintext under Paillier.

use fl_lrbc::crypto::{ct_add, ct_scalar_mul, decrypt, encrypt, keygen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let keys = keygen(1024, &mut rng)?;
    println!("modulus: {} bits", keys.public.bits());

    let a = encrypt(&keys.public, 2.75, &mut rng)?;
    let b = encrypt(&keys.public, -0.5, &mut rng)?;
    let sum = ct_add(&a, &b)?;
    let scaled = ct_scalar_mul(&sum, 0.25)?;

    println!(
        "E(2.75) + E(-0.5)       -> {}",
        decrypt(&keys.private, &sum)?
    );
    println!(
        "0.25 * (E(2.75) + E(-0.5)) -> {}",
        decrypt(&keys.private, &scaled)?
    );
    println!("ciphertext exponent after scaling: {}", scaled.exponent());
    Ok(())
}
