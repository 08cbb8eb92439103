//! Plaintext logistic regression with box-constrained coefficients.
//!
//! Holds the exact and second-order (Taylor) logistic losses, the projection
//! onto `[l, u]`, projected gradient training and KKT diagnostics. The
//! federated protocol is checked against this module iteration by iteration.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{dot, Matrix};
use crate::sampling::{plan_batch, uniform_init, STREAM_HOST_INIT};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("labels must be 0/1 (or -1/+1), found {0}")]
    Label(f64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid bounds at coordinate {0}: lower exceeds upper")]
    Bounds(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at iteration {iteration} (loss {loss:.4e}); try a learning rate below {eta}")]
    Diverged {
        iteration: usize,
        loss: f64,
        eta: f64,
    },
}

/// Coefficients over features plus an unconstrained intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Weights {
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        Self { w, b }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n], 0.0)
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `w^T x + b`.
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    /// Infinity-norm distance over coefficients and intercept.
    pub fn max_abs_diff(&self, other: &Weights) -> f64 {
        self.w
            .iter()
            .zip(&other.w)
            .map(|(a, b)| (a - b).abs())
            .fold((self.b - other.b).abs(), f64::max)
    }

    pub fn min_coefficient(&self) -> f64 {
        self.w.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Gradient with respect to `(w, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Gradient {
    pub fn zeros(n: usize) -> Self {
        Self {
            w: vec![0.0; n],
            b: 0.0,
        }
    }

    pub fn norm_inf(&self) -> f64 {
        self.w.iter().fold(self.b.abs(), |m, g| m.max(g.abs()))
    }
}

/// Rows of a mini-batch with labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub indices: Vec<usize>,
}

impl LabeledBatch {
    /// Accepts labels coded `{0, 1}` or `{-1, +1}`; `0` maps to `-1`.
    pub fn new(x: Matrix, labels: &[f64]) -> Result<Self, TrainError> {
        if labels.len() != x.rows() {
            return Err(TrainError::Dimension {
                expected: x.rows(),
                actual: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let y = labels
            .iter()
            .map(|&l| signed_label(l))
            .collect::<Result<Vec<_>, _>>()?;
        let indices = (0..x.rows()).collect();
        Ok(Self { x, y, indices })
    }

    pub fn from_binary(x: Matrix, labels: &[u8]) -> Result<Self, TrainError> {
        let l: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
        Self::new(x, &l)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Sub-batch; `indices` refer to rows of `self`.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            indices: indices.iter().map(|&i| self.indices[i]).collect(),
        }
    }

    /// Scores `u_i = w^T x_i + b`.
    pub fn scores(&self, weights: &Weights) -> Vec<f64> {
        self.x.iter_rows().map(|r| weights.score(r)).collect()
    }
}

pub fn signed_label(l: f64) -> Result<f64, TrainError> {
    if l == 1.0 {
        Ok(1.0)
    } else if l == 0.0 || l == -1.0 {
        Ok(-1.0)
    } else {
        Err(TrainError::Label(l))
    }
}

/// Per-coordinate box `[lower, upper]`; infinite bounds allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, TrainError> {
        if lower.len() != upper.len() {
            return Err(TrainError::Dimension {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if let Some(i) = (0..lower.len())
            .find(|&i| lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i])
        {
            return Err(TrainError::Bounds(i));
        }
        Ok(Self { lower, upper })
    }

    /// The scorecard box `[0, +inf)^n`.
    pub fn nonnegative(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub fn log_odds(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn predict_proba(weights: &Weights, x: &[f64]) -> Result<f64, TrainError> {
    check_dim(weights.dim(), x.len())?;
    Ok(sigmoid(weights.score(x)))
}

fn check_dim(expected: usize, actual: usize) -> Result<(), TrainError> {
    if expected == actual {
        Ok(())
    } else {
        Err(TrainError::Dimension { expected, actual })
    }
}

/// Mean logistic loss `(1/|S|) sum log(1 + exp(-y_i u_i))`.
pub fn exact_loss(weights: &Weights, batch: &LabeledBatch) -> Result<f64, TrainError> {
    check_dim(weights.dim(), batch.dim())?;
    let total: f64 = batch
        .scores(weights)
        .iter()
        .zip(&batch.y)
        .map(|(u, y)| softplus(-y * u))
        .sum();
    Ok(total / batch.len() as f64)
}

pub fn exact_gradient(weights: &Weights, batch: &LabeledBatch) -> Result<Gradient, TrainError> {
    check_dim(weights.dim(), batch.dim())?;
    let coef: Vec<f64> = batch
        .scores(weights)
        .iter()
        .zip(&batch.y)
        .map(|(u, y)| -y * sigmoid(-y * u))
        .collect();
    Ok(weighted_mean_rows(&batch.x, &coef))
}

/// Second-order expansion of the logistic loss around `u = 0`:
/// `(1/|S|) sum [log 2 - y_i u_i / 2 + u_i^2 / 8]`.
pub fn taylor_loss(u: &[f64], y: &[f64]) -> f64 {
    let total: f64 = u
        .iter()
        .zip(y)
        .map(|(u, y)| LN_2 - 0.5 * y * u + 0.125 * u * u)
        .sum();
    total / u.len() as f64
}

/// `d_i = u_i / 4 - y_i / 2`, the derivative of the Taylor loss in `u_i`.
pub fn taylor_residual(u: &[f64], y: &[f64]) -> Vec<f64> {
    u.iter().zip(y).map(|(u, y)| 0.25 * u - 0.5 * y).collect()
}

pub fn taylor_loss_at(weights: &Weights, batch: &LabeledBatch) -> Result<f64, TrainError> {
    check_dim(weights.dim(), batch.dim())?;
    Ok(taylor_loss(&batch.scores(weights), &batch.y))
}

/// `(1/|S|) sum d_i x_i`, with the intercept treated as a constant-one feature.
pub fn taylor_gradient(weights: &Weights, batch: &LabeledBatch) -> Result<Gradient, TrainError> {
    check_dim(weights.dim(), batch.dim())?;
    let d = taylor_residual(&batch.scores(weights), &batch.y);
    Ok(weighted_mean_rows(&batch.x, &d))
}

fn weighted_mean_rows(x: &Matrix, coef: &[f64]) -> Gradient {
    let mut g = Gradient::zeros(x.cols());
    for (row, c) in x.iter_rows().zip(coef) {
        for (gj, xj) in g.w.iter_mut().zip(row) {
            *gj += c * xj;
        }
        g.b += c;
    }
    let scale = 1.0 / coef.len() as f64;
    g.w.iter_mut().for_each(|v| *v *= scale);
    g.b *= scale;
    g
}

/// Coordinate-wise clamp onto the box.
pub fn project(v: &[f64], bounds: &BoxBounds) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            if x <= bounds.lower[i] {
                bounds.lower[i]
            } else if x >= bounds.upper[i] {
                bounds.upper[i]
            } else {
                x
            }
        })
        .collect()
}

/// `w <- P(w - eta g_w)`, `b <- b - eta g_b`.
pub fn pgd_step(weights: &Weights, grad: &Gradient, eta: f64, bounds: &BoxBounds) -> Weights {
    let stepped: Vec<f64> = weights
        .w
        .iter()
        .zip(&grad.w)
        .map(|(w, g)| w - eta * g)
        .collect();
    Weights {
        w: project(&stepped, bounds),
        b: weights.b - eta * grad.b,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Exact,
    Taylor,
}

impl LossKind {
    pub fn loss(self, weights: &Weights, batch: &LabeledBatch) -> Result<f64, TrainError> {
        match self {
            LossKind::Exact => exact_loss(weights, batch),
            LossKind::Taylor => taylor_loss_at(weights, batch),
        }
    }

    pub fn gradient(self, weights: &Weights, batch: &LabeledBatch) -> Result<Gradient, TrainError> {
        match self {
            LossKind::Exact => exact_gradient(weights, batch),
            LossKind::Taylor => taylor_gradient(weights, batch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub tol_loss: f64,
    pub tol_w: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            batch_size: 256,
            tol_loss: 1e-6,
            tol_w: 1e-6,
            max_iter: 1000,
            seed: 0,
            loss: LossKind::Taylor,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(TrainError::Config(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if self.tol_loss < 0.0 || self.tol_w < 0.0 {
            return Err(TrainError::Config("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Two consecutive losses within `tol_loss`.
    LossPlateau,
    /// Last update moved no coordinate by `tol_w` or more.
    WeightsStalled,
    MaxIter,
}

/// Stop rule shared by the centralized loop and the protocol coordinator.
///
/// Evaluated at iteration `k` once `loss_k` is known and before update `k`
/// is applied; `last_delta` is the infinity-norm move of update `k - 1`.
pub fn stop_condition(
    iteration: usize,
    loss: f64,
    previous_loss: Option<f64>,
    last_delta: Option<f64>,
    config: &TrainConfig,
) -> Option<StopReason> {
    if iteration >= config.max_iter {
        return Some(StopReason::MaxIter);
    }
    if last_delta.is_some_and(|d| d < config.tol_w) {
        return Some(StopReason::WeightsStalled);
    }
    if previous_loss.is_some_and(|p| (loss - p).abs() < config.tol_loss) {
        return Some(StopReason::LossPlateau);
    }
    None
}

/// Flags runs whose loss stays above ten times the first loss for ten
/// consecutive iterations.
#[derive(Debug, Clone, Default)]
pub struct DivergenceDetector {
    initial: Option<f64>,
    streak: usize,
}

impl DivergenceDetector {
    pub const FACTOR: f64 = 10.0;
    pub const PATIENCE: usize = 10;

    /// Returns `true` once divergence is established.
    pub fn observe(&mut self, loss: f64) -> bool {
        let initial = *self.initial.get_or_insert(loss);
        if !loss.is_finite() || loss > Self::FACTOR * initial {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.streak >= Self::PATIENCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: Weights,
    pub stop: StopReason,
    /// Number of updates applied.
    pub iterations: usize,
    /// Mini-batch loss observed at each iteration (including the stopping one).
    pub losses: Vec<f64>,
    /// `trajectory[0]` is the projected start, `trajectory[k + 1]` follows update `k`.
    pub trajectory: Vec<Weights>,
}

impl TrainOutcome {
    /// Whether the run stopped at a (near) fixed point of the projected step.
    pub fn is_stationary(&self) -> bool {
        self.stop == StopReason::WeightsStalled
    }
}

/// Default interior start `w ~ U[0, 0.01)`, `b = 0`.
pub fn initial_weights(n: usize, seed: u64) -> Weights {
    Weights::new(uniform_init(n, seed, STREAM_HOST_INIT), 0.0)
}

/// Mini-batch projected gradient descent on the full data set `data`.
///
/// Batches come from [`plan_batch`] so a federated run with the same seed
/// visits the same rows in the same order.
pub fn train_centralized(
    data: &LabeledBatch,
    config: &TrainConfig,
    bounds: &BoxBounds,
    initial: Option<Weights>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    check_dim(data.dim(), bounds.dim())?;
    if data.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let start = initial.unwrap_or_else(|| initial_weights(data.dim(), config.seed));
    check_dim(data.dim(), start.dim())?;

    let mut weights = Weights::new(project(&start.w, bounds), start.b);
    let mut trajectory = vec![weights.clone()];
    let mut losses = Vec::new();
    let mut previous_loss = None;
    let mut last_delta = None;
    let mut divergence = DivergenceDetector::default();

    for k in 0.. {
        let rows = plan_batch(k as u64, config.seed, config.batch_size, data.len());
        let batch = data.select(&rows);
        let loss = config.loss.loss(&weights, &batch)?;
        losses.push(loss);
        if divergence.observe(loss) {
            return Err(TrainError::Diverged {
                iteration: k,
                loss,
                eta: config.eta,
            });
        }
        log::debug!("iteration {k}: loss {loss:.6}, delta {last_delta:?}");
        if let Some(stop) = stop_condition(k, loss, previous_loss, last_delta, config) {
            return Ok(TrainOutcome {
                weights,
                stop,
                iterations: k,
                losses,
                trajectory,
            });
        }
        let grad = config.loss.gradient(&weights, &batch)?;
        let next = pgd_step(&weights, &grad, config.eta, bounds);
        last_delta = Some(next.max_abs_diff(&weights));
        weights = next;
        trajectory.push(weights.clone());
        previous_loss = Some(loss);
    }
    unreachable!("training loop exits through stop_condition")
}

/// Per-coordinate first-order status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundStatus {
    AtLower,
    Interior,
    AtUpper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub status: BoundStatus,
    pub gradient: f64,
}

impl CoordinateCheck {
    /// How far the gradient sign condition is violated (0 when satisfied):
    /// `>= 0` at the lower bound, `= 0` inside, `<= 0` at the upper bound.
    pub fn violation(&self) -> f64 {
        match self.status {
            BoundStatus::AtLower => (-self.gradient).max(0.0),
            BoundStatus::Interior => self.gradient.abs(),
            BoundStatus::AtUpper => self.gradient.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// `||x - P(x - grad f(x))||_inf` over coefficients and intercept.
    pub residual: f64,
    /// One entry per coefficient; the intercept is reported separately.
    pub coordinates: Vec<CoordinateCheck>,
    pub intercept_gradient: f64,
}

impl KktReport {
    pub fn max_sign_violation(&self) -> f64 {
        self.coordinates
            .iter()
            .map(CoordinateCheck::violation)
            .fold(self.intercept_gradient.abs(), f64::max)
    }
}

/// First-order optimality diagnostics on the full data set.
pub fn kkt_residual(
    weights: &Weights,
    data: &LabeledBatch,
    bounds: &BoxBounds,
    loss: LossKind,
) -> Result<KktReport, TrainError> {
    check_dim(bounds.dim(), weights.dim())?;
    let grad = loss.gradient(weights, data)?;
    let stepped: Vec<f64> = weights.w.iter().zip(&grad.w).map(|(w, g)| w - g).collect();
    let projected = project(&stepped, bounds);
    let residual = weights
        .w
        .iter()
        .zip(&projected)
        .map(|(w, p)| (w - p).abs())
        .fold(grad.b.abs(), f64::max);
    let coordinates = weights
        .w
        .iter()
        .zip(&grad.w)
        .enumerate()
        .map(|(i, (&w, &g))| {
            let status = if w <= bounds.lower[i] {
                BoundStatus::AtLower
            } else if w >= bounds.upper[i] {
                BoundStatus::AtUpper
            } else {
                BoundStatus::Interior
            };
            CoordinateCheck {
                status,
                gradient: g,
            }
        })
        .collect();
    Ok(KktReport {
        residual,
        coordinates,
        intercept_gradient: grad.b,
    })
}
