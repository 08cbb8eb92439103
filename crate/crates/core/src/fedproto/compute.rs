//! Per-party arithmetic of one protocol round, free of any messaging.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use super::{PartyRole, ProtocolError};
use crate::crypto::{
    ct_add, ct_scalar_mul, decrypt, encrypt, encrypt_encoded, Ciphertext, EncodedNumber,
    PrivateKey, PublicKey, DEFAULT_EXPONENT,
};
use crate::lrbc::{
    pgd_step, stop_condition, BoxBounds, DivergenceDetector, Gradient, StopReason, TrainConfig,
    TrainError, Weights,
};
use crate::matrix::{dot, Matrix};

/// `sum_i coeffs[i] * [[c_i]]`.
///
/// Ciphertexts sharing a coefficient are added first, so the cost is one
/// scalar multiplication per distinct coefficient. Zero coefficients are
/// skipped; the result is exact in the encoded domain either way.
pub fn encrypted_dot(
    key: &Arc<PublicKey>,
    cts: &[Ciphertext],
    coeffs: &[f64],
) -> Result<Ciphertext, ProtocolError> {
    let mut groups: BTreeMap<u64, Ciphertext> = BTreeMap::new();
    for (c, &v) in cts.iter().zip(coeffs) {
        if v == 0.0 {
            continue;
        }
        match groups.entry(v.to_bits()) {
            Entry::Vacant(e) => {
                e.insert(c.clone());
            }
            Entry::Occupied(mut e) => {
                let sum = ct_add(e.get(), c)?;
                e.insert(sum);
            }
        }
    }
    let mut acc: Option<Ciphertext> = None;
    for (bits, sum) in groups {
        let term = ct_scalar_mul(&sum, f64::from_bits(bits))?;
        acc = Some(match acc {
            None => term,
            Some(a) => ct_add(&a, &term)?,
        });
    }
    let exponent = cts.first().map_or(DEFAULT_EXPONENT, Ciphertext::exponent) + DEFAULT_EXPONENT;
    Ok(acc.unwrap_or_else(|| Ciphertext::trivial_zero(key, exponent)))
}

/// `(1/|S|) sum_i d_i x_ij` for every column of the batch rows.
fn mean_weighted_columns(
    key: &Arc<PublicKey>,
    residuals: &[Ciphertext],
    x: &Matrix,
) -> Result<Vec<Ciphertext>, ProtocolError> {
    let scale = 1.0 / residuals.len() as f64;
    (0..x.cols())
        .map(|j| {
            Ok(ct_scalar_mul(
                &encrypted_dot(key, residuals, &x.column(j))?,
                scale,
            )?)
        })
        .collect()
}

fn check_len(role: PartyRole, expected: usize, actual: usize) -> Result<(), ProtocolError> {
    if expected != actual {
        return Err(ProtocolError::Dimension {
            role,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Host step 1: `[[u_A]]` and `[[u_A^2]]` for the batch rows `x`.
pub fn host_forward<R: Rng + ?Sized>(
    key: &Arc<PublicKey>,
    x: &Matrix,
    w: &[f64],
    rng: &mut R,
) -> Result<(Vec<Ciphertext>, Vec<Ciphertext>), ProtocolError> {
    check_len(PartyRole::Host, x.cols(), w.len())?;
    let mut scores = Vec::with_capacity(x.rows());
    let mut squares = Vec::with_capacity(x.rows());
    for row in x.iter_rows() {
        let u = dot(row, w);
        scores.push(encrypt(key, u, rng)?);
        squares.push(encrypt(key, u * u, rng)?);
    }
    Ok((scores, squares))
}

/// Encrypted quantities the guest produces in one round.
#[derive(Debug, Clone)]
pub struct GuestRound {
    /// `[[d_i]]`, sent to the host.
    pub residuals: Vec<Ciphertext>,
    /// `[[loss]]`, sent to the coordinator.
    pub loss: Ciphertext,
    /// Guest feature gradients followed by the intercept gradient.
    pub gradient: Vec<Ciphertext>,
}

/// Guest step: combines the host's encrypted scores with its own plaintext
/// scores and labels `y` in `{-1, +1}`.
///
/// `d_i = 1/4 ([[u_A]] + [[u_B]]) + [[-y_i/2]]` and
/// `loss = (1/|S|) sum_i [log 2 - y_i/2 (u_A + u_B) + 1/8 (u_A^2 + 2 u_B u_A + u_B^2)]`.
/// The terms that only involve guest plaintext are summed before encryption.
pub fn guest_compute<R: Rng + ?Sized>(
    key: &Arc<PublicKey>,
    scores_a: &[Ciphertext],
    squares_a: &[Ciphertext],
    x: &Matrix,
    weights: &Weights,
    y: &[f64],
    rng: &mut R,
) -> Result<GuestRound, ProtocolError> {
    let m = x.rows();
    check_len(PartyRole::Guest, m, scores_a.len())?;
    check_len(PartyRole::Guest, m, squares_a.len())?;
    check_len(PartyRole::Guest, m, y.len())?;
    check_len(PartyRole::Guest, x.cols(), weights.dim())?;
    if m == 0 {
        return Err(TrainError::EmptyBatch.into());
    }
    let u_b: Vec<f64> = x.iter_rows().map(|row| weights.score(row)).collect();

    let residual_exponent = 2 * DEFAULT_EXPONENT;
    let mut sums = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    for i in 0..m {
        let s = ct_add(&scores_a[i], &encrypt(key, u_b[i], rng)?)?;
        let half_y = EncodedNumber::encode_with_exponent(-0.5 * y[i], residual_exponent)?;
        let quarter = ct_scalar_mul(&s, 0.25)?;
        residuals.push(ct_add(&quarter, &encrypt_encoded(key, &half_y, rng)?)?);
        sums.push(s);
    }

    let n = m as f64;
    let log2 = ct_scalar_mul(&encrypt(key, std::f64::consts::LN_2, rng)?, n)?;
    let neg_half_y: Vec<f64> = y.iter().map(|v| -0.5 * v).collect();
    let label_term = encrypted_dot(key, &sums, &neg_half_y)?;
    let twice_u_b: Vec<f64> = u_b.iter().map(|u| 2.0 * u).collect();
    let mut quad = encrypted_dot(key, scores_a, &twice_u_b)?;
    for sq in squares_a {
        quad = ct_add(&quad, sq)?;
    }
    let u_b_sq: f64 = u_b.iter().map(|u| u * u).sum();
    quad = ct_add(&quad, &encrypt(key, u_b_sq, rng)?)?;
    let total = ct_add(&ct_add(&log2, &label_term)?, &ct_scalar_mul(&quad, 0.125)?)?;
    let loss = ct_scalar_mul(&total, 1.0 / n)?;

    let mut gradient = mean_weighted_columns(key, &residuals, x)?;
    let ones = vec![1.0; m];
    gradient.push(ct_scalar_mul(
        &encrypted_dot(key, &residuals, &ones)?,
        1.0 / n,
    )?);
    Ok(GuestRound {
        residuals,
        loss,
        gradient,
    })
}

/// Host step 2: `[[g_A]]_j = (1/|S|) sum_i [[d_i]] x_ij`.
pub fn host_gradient(
    key: &Arc<PublicKey>,
    residuals: &[Ciphertext],
    x: &Matrix,
) -> Result<Vec<Ciphertext>, ProtocolError> {
    check_len(PartyRole::Host, x.rows(), residuals.len())?;
    if residuals.is_empty() {
        return Err(TrainError::EmptyBatch.into());
    }
    mean_weighted_columns(key, residuals, x)
}

/// What the coordinator does after seeing iteration `k`'s encrypted values.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatorDecision {
    pub loss: f64,
    /// `None` when stopping; gradients are then left encrypted.
    pub step: Option<(Vec<f64>, Vec<f64>)>,
    pub stop: Option<StopReason>,
}

/// Decrypts the loss, applies the shared stop rule and, if training goes
/// on, decrypts both gradients.
///
/// `deltas` are the weight moves both parties reported for their previous
/// update; the larger one feeds the stop rule.
#[allow(clippy::too_many_arguments)]
pub fn coordinator_step(
    key: &PrivateKey,
    config: &TrainConfig,
    iteration: usize,
    loss: &Ciphertext,
    host_gradient: &[Ciphertext],
    guest_gradient: &[Ciphertext],
    deltas: (Option<f64>, Option<f64>),
    previous_loss: Option<f64>,
    divergence: &mut DivergenceDetector,
) -> Result<CoordinatorDecision, ProtocolError> {
    let loss = decrypt(key, loss)?;
    if divergence.observe(loss) {
        return Err(TrainError::Diverged {
            iteration,
            loss,
            eta: config.eta,
        }
        .into());
    }
    let delta = match deltas {
        (Some(a), Some(b)) => Some(a.max(b)),
        _ => None,
    };
    log::debug!("iteration {iteration}: loss {loss:.6}, delta {delta:?}");
    if let Some(stop) = stop_condition(iteration, loss, previous_loss, delta, config) {
        return Ok(CoordinatorDecision {
            loss,
            step: None,
            stop: Some(stop),
        });
    }
    let open = |cts: &[Ciphertext]| -> Result<Vec<f64>, ProtocolError> {
        cts.iter().map(|c| Ok(decrypt(key, c)?)).collect()
    };
    Ok(CoordinatorDecision {
        loss,
        step: Some((open(host_gradient)?, open(guest_gradient)?)),
        stop: None,
    })
}

/// Local projected step; returns the new weights and their infinity-norm move.
pub fn party_update(
    weights: &Weights,
    gradient: &Gradient,
    eta: f64,
    bounds: &BoxBounds,
) -> (Weights, f64) {
    let next = pgd_step(weights, gradient, eta, bounds);
    let delta = next.max_abs_diff(weights);
    (next, delta)
}
