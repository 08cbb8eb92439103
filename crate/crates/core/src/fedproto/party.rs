//! Party state machines and protocol setup.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::compute::{coordinator_step, guest_compute, host_forward, host_gradient, party_update};
use super::message::{MessageKind, PartyRole, Payload, ProtocolMessage};
use super::{ProtocolConfig, ProtocolError};
use crate::crypto::{keygen, Ciphertext, KeyPair, PrivateKey, PublicKey};
use crate::lrbc::{
    project, signed_label, BoxBounds, DivergenceDetector, Gradient, StopReason, TrainConfig,
    Weights,
};
use crate::matrix::Matrix;
use crate::sampling::{
    guest_initial_weights, host_initial_weights, plan_batch, stream_rng, STREAM_GUEST_ENC,
    STREAM_HOST_ENC, STREAM_KEYGEN,
};

/// A protocol participant driven one message at a time.
pub trait Party: Send {
    fn role(&self) -> PartyRole;

    /// Key used to decode incoming ciphertext frames.
    fn public_key(&self) -> Option<&Arc<PublicKey>>;

    /// Messages to send before anything has been received.
    fn start(&mut self) -> Result<Vec<ProtocolMessage>, ProtocolError>;

    fn handle(&mut self, msg: ProtocolMessage) -> Result<Vec<ProtocolMessage>, ProtocolError>;

    fn is_finished(&self) -> bool;
}

fn unexpected(role: PartyRole, msg: &ProtocolMessage) -> ProtocolError {
    ProtocolError::UnexpectedMessage {
        role,
        kind: msg.kind(),
        from: msg.from,
    }
}

fn expect_iteration(
    role: PartyRole,
    expected: u32,
    msg: &ProtocolMessage,
) -> Result<(), ProtocolError> {
    if msg.iteration != expected {
        return Err(ProtocolError::IterationMismatch {
            role,
            expected,
            actual: msg.iteration,
        });
    }
    Ok(())
}

fn check_route(role: PartyRole, msg: &ProtocolMessage) -> Result<(), ProtocolError> {
    if msg.to != role || !msg.kind().allowed_routes().contains(&(msg.from, msg.to)) {
        return Err(unexpected(role, msg));
    }
    Ok(())
}

fn require_key(
    key: &Option<Arc<PublicKey>>,
    kind: MessageKind,
) -> Result<&Arc<PublicKey>, ProtocolError> {
    key.as_ref().ok_or(ProtocolError::MissingKey(kind))
}

fn install_key(slot: &mut Option<Arc<PublicKey>>, n: &[u8]) -> Result<(), ProtocolError> {
    *slot = Some(Arc::new(PublicKey::from_bytes(n)?));
    Ok(())
}

/// Party A: holds `X^A` and `w^A`, never sees labels.
pub struct HostParty {
    x: Matrix,
    weights: Weights,
    bounds: BoxBounds,
    config: TrainConfig,
    key: Option<Arc<PublicKey>>,
    rng: ChaCha20Rng,
    iteration: u32,
    batch: Option<Vec<usize>>,
    last_delta: Option<f64>,
    trajectory: Vec<Vec<f64>>,
    stop: Option<StopReason>,
}

impl HostParty {
    pub fn weights(&self) -> &[f64] {
        &self.weights.w
    }

    /// `trajectory[0]` is the projected start, then one entry per update.
    pub fn trajectory(&self) -> &[Vec<f64>] {
        &self.trajectory
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }
}

impl Party for HostParty {
    fn role(&self) -> PartyRole {
        PartyRole::Host
    }

    fn public_key(&self) -> Option<&Arc<PublicKey>> {
        self.key.as_ref()
    }

    fn start(&mut self) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        Ok(Vec::new())
    }

    fn handle(&mut self, msg: ProtocolMessage) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        let role = PartyRole::Host;
        check_route(role, &msg)?;
        match &msg.payload {
            Payload::PubKey { n } => {
                install_key(&mut self.key, n)?;
                Ok(Vec::new())
            }
            Payload::BatchPlan { indices } => {
                expect_iteration(role, self.iteration, &msg)?;
                let own = plan_batch(
                    self.iteration as u64,
                    self.config.seed,
                    self.config.batch_size,
                    self.x.rows(),
                );
                if indices.len() != own.len()
                    || indices.iter().zip(&own).any(|(&a, &b)| a as usize != b)
                {
                    return Err(ProtocolError::BatchMismatch(self.iteration));
                }
                let key = require_key(&self.key, msg.kind())?;
                let xs = self.x.select_rows(&own);
                let (scores, squares) = host_forward(key, &xs, &self.weights.w, &mut self.rng)?;
                self.batch = Some(own);
                Ok(vec![ProtocolMessage::new(
                    role,
                    PartyRole::Guest,
                    self.iteration,
                    Payload::EncScores { scores, squares },
                )])
            }
            Payload::EncResidual { residuals } => {
                expect_iteration(role, self.iteration, &msg)?;
                let key = require_key(&self.key, msg.kind())?;
                let rows = self.batch.as_ref().ok_or_else(|| unexpected(role, &msg))?;
                let gradient = host_gradient(key, residuals, &self.x.select_rows(rows))?;
                Ok(vec![ProtocolMessage::new(
                    role,
                    PartyRole::Coordinator,
                    self.iteration,
                    Payload::EncLossAndGrad {
                        weight_delta: self.last_delta,
                        loss: None,
                        gradient,
                    },
                )])
            }
            Payload::PlainGrad { gradient } => {
                expect_iteration(role, self.iteration, &msg)?;
                if gradient.len() != self.weights.dim() {
                    return Err(ProtocolError::Dimension {
                        role,
                        expected: self.weights.dim(),
                        actual: gradient.len(),
                    });
                }
                let g = Gradient {
                    w: gradient.clone(),
                    b: 0.0,
                };
                let (next, delta) = party_update(&self.weights, &g, self.config.eta, &self.bounds);
                self.weights = next;
                self.last_delta = Some(delta);
                self.trajectory.push(self.weights.w.clone());
                self.batch = None;
                self.iteration += 1;
                Ok(Vec::new())
            }
            Payload::Stop { reason } => {
                expect_iteration(role, self.iteration, &msg)?;
                self.stop = Some(*reason);
                Ok(Vec::new())
            }
            _ => Err(unexpected(role, &msg)),
        }
    }

    fn is_finished(&self) -> bool {
        self.stop.is_some()
    }
}

/// Party B: holds `X^B`, the labels, `w^B` and the intercept.
pub struct GuestParty {
    x: Matrix,
    y: Vec<f64>,
    weights: Weights,
    bounds: BoxBounds,
    config: TrainConfig,
    key: Option<Arc<PublicKey>>,
    rng: ChaCha20Rng,
    iteration: u32,
    batch: Option<Vec<usize>>,
    last_delta: Option<f64>,
    trajectory: Vec<Weights>,
    stop: Option<StopReason>,
}

impl GuestParty {
    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn trajectory(&self) -> &[Weights] {
        &self.trajectory
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    fn plan(&self) -> ProtocolMessage {
        let rows = plan_batch(
            self.iteration as u64,
            self.config.seed,
            self.config.batch_size,
            self.x.rows(),
        );
        ProtocolMessage::new(
            PartyRole::Guest,
            PartyRole::Host,
            self.iteration,
            Payload::BatchPlan {
                indices: rows.iter().map(|&i| i as u32).collect(),
            },
        )
    }
}

impl Party for GuestParty {
    fn role(&self) -> PartyRole {
        PartyRole::Guest
    }

    fn public_key(&self) -> Option<&Arc<PublicKey>> {
        self.key.as_ref()
    }

    fn start(&mut self) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        Ok(Vec::new())
    }

    fn handle(&mut self, msg: ProtocolMessage) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        let role = PartyRole::Guest;
        check_route(role, &msg)?;
        match &msg.payload {
            Payload::PubKey { n } => {
                install_key(&mut self.key, n)?;
                let plan = self.plan();
                self.batch = Some(plan_batch(
                    0,
                    self.config.seed,
                    self.config.batch_size,
                    self.x.rows(),
                ));
                Ok(vec![plan])
            }
            Payload::EncScores { scores, squares } => {
                expect_iteration(role, self.iteration, &msg)?;
                let key = require_key(&self.key, msg.kind())?;
                let rows = self.batch.as_ref().ok_or_else(|| unexpected(role, &msg))?;
                let y: Vec<f64> = rows.iter().map(|&i| self.y[i]).collect();
                let round = guest_compute(
                    key,
                    scores,
                    squares,
                    &self.x.select_rows(rows),
                    &self.weights,
                    &y,
                    &mut self.rng,
                )?;
                Ok(vec![
                    ProtocolMessage::new(
                        role,
                        PartyRole::Host,
                        self.iteration,
                        Payload::EncResidual {
                            residuals: round.residuals,
                        },
                    ),
                    ProtocolMessage::new(
                        role,
                        PartyRole::Coordinator,
                        self.iteration,
                        Payload::EncLossAndGrad {
                            weight_delta: self.last_delta,
                            loss: Some(round.loss),
                            gradient: round.gradient,
                        },
                    ),
                ])
            }
            Payload::PlainGrad { gradient } => {
                expect_iteration(role, self.iteration, &msg)?;
                let n = self.weights.dim();
                if gradient.len() != n + 1 {
                    return Err(ProtocolError::Dimension {
                        role,
                        expected: n + 1,
                        actual: gradient.len(),
                    });
                }
                let g = Gradient {
                    w: gradient[..n].to_vec(),
                    b: gradient[n],
                };
                let (next, delta) = party_update(&self.weights, &g, self.config.eta, &self.bounds);
                self.weights = next;
                self.last_delta = Some(delta);
                self.trajectory.push(self.weights.clone());
                self.iteration += 1;
                let plan = self.plan();
                self.batch = Some(plan_batch(
                    self.iteration as u64,
                    self.config.seed,
                    self.config.batch_size,
                    self.x.rows(),
                ));
                Ok(vec![plan])
            }
            Payload::Stop { reason } => {
                expect_iteration(role, self.iteration, &msg)?;
                self.stop = Some(*reason);
                Ok(Vec::new())
            }
            _ => Err(unexpected(role, &msg)),
        }
    }

    fn is_finished(&self) -> bool {
        self.stop.is_some()
    }
}

struct PendingHost {
    delta: Option<f64>,
    gradient: Vec<Ciphertext>,
}

struct PendingGuest {
    delta: Option<f64>,
    loss: Ciphertext,
    gradient: Vec<Ciphertext>,
}

/// Party C: the only holder of the private key.
pub struct CoordinatorParty {
    keys: KeyPair,
    config: TrainConfig,
    host_dim: usize,
    guest_dim: usize,
    iteration: u32,
    host: Option<PendingHost>,
    guest: Option<PendingGuest>,
    previous_loss: Option<f64>,
    losses: Vec<f64>,
    divergence: DivergenceDetector,
    stop: Option<StopReason>,
}

impl CoordinatorParty {
    /// Mini-batch loss at every iteration, including the stopping one.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    /// Number of updates the parties applied.
    pub fn iterations(&self) -> usize {
        self.iteration as usize
    }

    pub fn private_key(&self) -> &PrivateKey {
        &self.keys.private
    }

    fn decide(&mut self) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        let (host, guest) = match (self.host.take(), self.guest.take()) {
            (Some(h), Some(g)) => (h, g),
            (h, g) => {
                self.host = h;
                self.guest = g;
                return Ok(Vec::new());
            }
        };
        let role = PartyRole::Coordinator;
        let decision = coordinator_step(
            &self.keys.private,
            &self.config,
            self.iteration as usize,
            &guest.loss,
            &host.gradient,
            &guest.gradient,
            (host.delta, guest.delta),
            self.previous_loss,
            &mut self.divergence,
        )?;
        self.losses.push(decision.loss);
        let k = self.iteration;
        if let Some(reason) = decision.stop {
            self.stop = Some(reason);
            return Ok([PartyRole::Host, PartyRole::Guest]
                .into_iter()
                .map(|to| ProtocolMessage::new(role, to, k, Payload::Stop { reason }))
                .collect());
        }
        let (ga, gb) = decision.step.expect("continuing step carries gradients");
        self.previous_loss = Some(decision.loss);
        self.iteration += 1;
        Ok(vec![
            ProtocolMessage::new(
                role,
                PartyRole::Host,
                k,
                Payload::PlainGrad { gradient: ga },
            ),
            ProtocolMessage::new(
                role,
                PartyRole::Guest,
                k,
                Payload::PlainGrad { gradient: gb },
            ),
        ])
    }
}

impl Party for CoordinatorParty {
    fn role(&self) -> PartyRole {
        PartyRole::Coordinator
    }

    fn public_key(&self) -> Option<&Arc<PublicKey>> {
        Some(&self.keys.public)
    }

    fn start(&mut self) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        let n = self.keys.public.to_bytes();
        Ok([PartyRole::Host, PartyRole::Guest]
            .into_iter()
            .map(|to| {
                ProtocolMessage::new(
                    PartyRole::Coordinator,
                    to,
                    0,
                    Payload::PubKey { n: n.clone() },
                )
            })
            .collect())
    }

    fn handle(&mut self, msg: ProtocolMessage) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        let role = PartyRole::Coordinator;
        check_route(role, &msg)?;
        expect_iteration(role, self.iteration, &msg)?;
        let Payload::EncLossAndGrad {
            weight_delta,
            loss,
            gradient,
        } = msg.payload
        else {
            return Err(unexpected(role, &msg));
        };
        let dup = ProtocolError::UnexpectedMessage {
            role,
            kind: MessageKind::EncLossAndGrad,
            from: msg.from,
        };
        match (msg.from, loss) {
            (PartyRole::Host, None) => {
                if self.host.is_some() {
                    return Err(dup);
                }
                if gradient.len() != self.host_dim {
                    return Err(ProtocolError::Dimension {
                        role,
                        expected: self.host_dim,
                        actual: gradient.len(),
                    });
                }
                self.host = Some(PendingHost {
                    delta: weight_delta,
                    gradient,
                });
            }
            (PartyRole::Guest, Some(loss)) => {
                if self.guest.is_some() {
                    return Err(dup);
                }
                if gradient.len() != self.guest_dim + 1 {
                    return Err(ProtocolError::Dimension {
                        role,
                        expected: self.guest_dim + 1,
                        actual: gradient.len(),
                    });
                }
                self.guest = Some(PendingGuest {
                    delta: weight_delta,
                    loss,
                    gradient,
                });
            }
            _ => return Err(dup),
        }
        self.decide()
    }

    fn is_finished(&self) -> bool {
        self.stop.is_some()
    }
}

pub struct Parties {
    pub host: HostParty,
    pub guest: GuestParty,
    pub coordinator: CoordinatorParty,
}

fn crypto_rng(seed: Option<u64>, stream: u64) -> ChaCha20Rng {
    match seed {
        Some(s) => stream_rng(s, stream),
        None => ChaCha20Rng::from_entropy(),
    }
}

/// Builds the three parties: the coordinator generates the key pair, and the
/// host and guest receive only the public key once the run starts.
///
/// `host_x` and `guest_x` must be row-aligned on the shared id intersection;
/// `labels` are the guest's `{0, 1}` labels in the same order.
pub fn setup(
    config: &ProtocolConfig,
    host_x: Matrix,
    guest_x: Matrix,
    labels: &[u8],
) -> Result<Parties, ProtocolError> {
    config.train.validate()?;
    let rows = host_x.rows();
    if rows == 0 {
        return Err(ProtocolError::Setup("no aligned rows".into()));
    }
    if guest_x.rows() != rows || labels.len() != rows {
        return Err(ProtocolError::Setup(format!(
            "row counts differ: host {rows}, guest {}, labels {}",
            guest_x.rows(),
            labels.len()
        )));
    }
    if u32::try_from(rows).is_err() {
        return Err(ProtocolError::Setup(
            "more rows than batch plans can index".into(),
        ));
    }
    let y = labels
        .iter()
        .map(|&l| signed_label(l as f64))
        .collect::<Result<Vec<_>, _>>()?;
    let (na, nb) = (host_x.cols(), guest_x.cols());
    let (host_bounds, guest_bounds) = match &config.bounds {
        None => (BoxBounds::nonnegative(na), BoxBounds::nonnegative(nb)),
        Some(b) => {
            if b.dim() != na + nb {
                return Err(ProtocolError::Setup(format!(
                    "bounds cover {} features, data has {}",
                    b.dim(),
                    na + nb
                )));
            }
            let (l, u) = (b.lower(), b.upper());
            (
                BoxBounds::new(l[..na].to_vec(), u[..na].to_vec())?,
                BoxBounds::new(l[na..].to_vec(), u[na..].to_vec())?,
            )
        }
    };
    let seed = config.train.seed;
    let host_start = config
        .host_initial
        .clone()
        .unwrap_or_else(|| host_initial_weights(na, seed));
    let guest_start = config
        .guest_initial
        .clone()
        .unwrap_or_else(|| Weights::new(guest_initial_weights(nb, seed), 0.0));
    if host_start.len() != na || guest_start.dim() != nb {
        return Err(ProtocolError::Setup(
            "initial weights do not match feature counts".into(),
        ));
    }
    let host_w = Weights::new(project(&host_start, &host_bounds), 0.0);
    let guest_w = Weights::new(project(&guest_start.w, &guest_bounds), guest_start.b);

    let keys = keygen(
        config.key_bits,
        &mut crypto_rng(config.crypto_seed, STREAM_KEYGEN),
    )?;
    let train = TrainConfig {
        loss: crate::lrbc::LossKind::Taylor,
        ..config.train.clone()
    };
    Ok(Parties {
        host: HostParty {
            x: host_x,
            trajectory: vec![host_w.w.clone()],
            weights: host_w,
            bounds: host_bounds,
            config: train.clone(),
            key: None,
            rng: crypto_rng(config.crypto_seed, STREAM_HOST_ENC),
            iteration: 0,
            batch: None,
            last_delta: None,
            stop: None,
        },
        guest: GuestParty {
            x: guest_x,
            y,
            trajectory: vec![guest_w.clone()],
            weights: guest_w,
            bounds: guest_bounds,
            config: train.clone(),
            key: None,
            rng: crypto_rng(config.crypto_seed, STREAM_GUEST_ENC),
            iteration: 0,
            batch: None,
            last_delta: None,
            stop: None,
        },
        coordinator: CoordinatorParty {
            keys,
            config: train,
            host_dim: na,
            guest_dim: nb,
            iteration: 0,
            host: None,
            guest: None,
            previous_loss: None,
            losses: Vec::new(),
            divergence: DivergenceDetector::default(),
            stop: None,
        },
    })
}
