//! Non-negative logistic regression by projected gradient descent, with
//! first-order optimality diagnostics.

use fl_lrbc::lrbc::{
    kkt_residual, train_centralized, BoxBounds, LabeledBatch, LossKind, TrainConfig,
};
use fl_lrbc::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // The second feature lowers risk, so its coefficient is pinned at zero.
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..1000 {
        let x = [
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.5..1.5),
        ];
        let z: f64 = 1.2 * x[0] - 0.8 * x[1] + 0.4 * x[2] - 0.3;
        labels.push(u8::from(rng.gen::<f64>() < 1.0 / (1.0 + (-z).exp())));
        rows.push(x.to_vec());
    }
    let data = LabeledBatch::from_binary(Matrix::from_rows(&rows), &labels)?;
    let bounds = BoxBounds::nonnegative(3);

    for loss in [LossKind::Exact, LossKind::Taylor] {
        let config = TrainConfig {
            eta: 0.5,
            batch_size: 1000,
            tol_loss: 0.0,
            max_iter: 50_000,
            loss,
            ..TrainConfig::default()
        };
        let out = train_centralized(&data, &config, &bounds, None)?;
        let kkt = kkt_residual(&out.weights, &data, &bounds, loss)?;
        println!(
            "{loss:?} loss: stop {:?} after {} iterations",
            out.stop, out.iterations
        );
        println!("  w = {:?}, b = {:.4}", out.weights.w, out.weights.b);
        println!(
            "  projected-gradient residual {:.2e}, worst sign violation {:.2e}",
            kkt.residual,
            kkt.max_sign_violation()
        );
        for (j, c) in kkt.coordinates.iter().enumerate() {
            println!("  w{j}: {:?}, gradient {:+.2e}", c.status, c.gradient);
        }
    }
    Ok(())
}
