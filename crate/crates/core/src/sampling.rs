//! Seeded mini-batch planning and weight initialization shared by the
//! centralized trainer and every protocol party.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Stream ids keep independent draws from one master seed apart. Batch plans
/// use `STREAM_BATCH + iteration`.
pub(crate) const STREAM_BATCH: u64 = 0x0b47_c400_0000_0000;
pub(crate) const STREAM_HOST_INIT: u64 = 0x1a17_0000_0000_000a;
pub(crate) const STREAM_GUEST_INIT: u64 = 0x1a17_0000_0000_000b;
pub(crate) const STREAM_KEYGEN: u64 = 0x6e79_0000_0000_000c;
pub(crate) const STREAM_HOST_ENC: u64 = 0x6e79_0000_0000_000a;
pub(crate) const STREAM_GUEST_ENC: u64 = 0x6e79_0000_0000_000b;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sorted, unique indices in `[0, total)` for iteration `iteration`.
///
/// A pure function of `(seed, iteration)`; `batch_size >= total` yields every index.
pub fn plan_batch(iteration: u64, seed: u64, batch_size: usize, total: usize) -> Vec<usize> {
    if batch_size >= total {
        return (0..total).collect();
    }
    let mut rng = stream_rng(seed, STREAM_BATCH.wrapping_add(iteration));
    let mut picked = index::sample(&mut rng, total, batch_size).into_vec();
    picked.sort_unstable();
    picked
}

/// Uniform draws in `[0, 0.01)`, the strictly interior starting point.
pub fn uniform_init(n: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    (0..n).map(|_| rng.gen_range(0.0..0.01)).collect()
}

/// Initial host coefficients for a master seed.
pub fn host_initial_weights(n: usize, seed: u64) -> Vec<f64> {
    uniform_init(n, seed, STREAM_HOST_INIT)
}

/// Initial guest coefficients (intercept starts at zero).
pub fn guest_initial_weights(n: usize, seed: u64) -> Vec<f64> {
    uniform_init(n, seed, STREAM_GUEST_INIT)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_is_deterministic_and_unique() {
        let a = plan_batch(7, 42, 64, 1000);
        let b = plan_batch(7, 42, 64, 1000);
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&i| i < 1000));
    }

    #[test]
    fn full_batch_covers_everything() {
        assert_eq!(plan_batch(3, 1, 10, 10), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn consecutive_iterations_differ() {
        let plans: Vec<_> = (0..100).map(|k| plan_batch(k, 9, 32, 500)).collect();
        for w in plans.windows(2) {
            assert_ne!(w[0], w[1]);
        }
    }

    #[test]
    fn init_is_interior() {
        let w = uniform_init(50, 3, STREAM_HOST_INIT);
        assert!(w.iter().all(|&v| (0.0..0.01).contains(&v)));
        assert_ne!(w, uniform_init(50, 3, STREAM_GUEST_INIT));
    }
}
