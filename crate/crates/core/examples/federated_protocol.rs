//! Host, guest and coordinator train over in-process channels; the
//! transcript is checked for message order and leaked plaintext.

use fl_lrbc::fedproto::{
    audit_privacy, check_flow, run_threaded, setup, PrivacyContext, ProtocolConfig,
};
use fl_lrbc::lrbc::TrainConfig;
use fl_lrbc::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let n = 400;
    let mut host = Vec::new();
    let mut guest = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z = 0.8 * a[0] + 0.5 * a[1] + 1.0 * b[0] - 0.2;
        labels.push(u8::from(rng.gen::<f64>() < 1.0 / (1.0 + (-z).exp())));
        host.push(a);
        guest.push(b);
    }

    let config = ProtocolConfig::new(TrainConfig {
        eta: 0.5,
        batch_size: 100,
        max_iter: 25,
        ..TrainConfig::default()
    })
    .with_key_bits(512)
    .with_crypto_seed(1);
    let parties = setup(
        &config,
        Matrix::from_rows(&host),
        Matrix::from_rows(&guest),
        &labels,
    )?;
    let out = run_threaded(parties, config.timeout)?;

    println!(
        "stop {:?} after {} iterations",
        out.stop(),
        out.iterations()
    );
    println!("host weights  {:?}", out.host_weights());
    println!("guest weights {:?}", out.guest_weights());
    println!(
        "loss: first {:.6}, last {:.6}",
        out.losses()[0],
        out.losses().last().unwrap()
    );

    let flow = check_flow(&out.transcript)?;
    let key = out.parties.coordinator.private_key();
    let secrets = key.secret_bytes();
    let sensitive: Vec<f64> = host.iter().flatten().copied().collect();
    let privacy = audit_privacy(
        &out.transcript,
        &PrivacyContext {
            public_key: key.public_key(),
            secrets: &secrets,
            rows: n,
            host_dim: 3,
            sensitive_values: &sensitive,
        },
    );
    println!(
        "transcript: {} messages, {} bytes, {} updates, {} host<->guest messages, {} violations",
        out.transcript.len(),
        out.transcript.total_bytes(),
        flow.updates,
        privacy.host_guest_messages,
        privacy.violations.len()
    );
    println!(
        "first round:\n{}",
        out.transcript
            .dump()
            .lines()
            .take(9)
            .collect::<Vec<_>>()
            .join("\n")
    );
    Ok(())
}
