//! Message delivery: a deterministic single-thread FIFO loop and a
//! thread-per-party runner over channels.

use std::collections::VecDeque;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::message::{decode_frame, encode_frame, PartyRole, ProtocolMessage};
use super::party::{Parties, Party};
use super::transcript::Transcript;
use super::ProtocolError;
use crate::lrbc::{StopReason, Weights};

type Envelope = (PartyRole, PartyRole, Vec<u8>);

/// A failed run together with everything delivered before the failure.
#[derive(Debug)]
pub struct ProtocolFailure {
    pub error: ProtocolError,
    pub transcript: Transcript,
}

impl fmt::Display for ProtocolFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} delivered messages)",
            self.error,
            self.transcript.len()
        )
    }
}

impl std::error::Error for ProtocolFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Final party states and the delivery transcript of a finished run.
pub struct FederatedOutcome {
    pub parties: Parties,
    pub transcript: Transcript,
}

impl FederatedOutcome {
    pub fn stop(&self) -> StopReason {
        self.parties
            .coordinator
            .stop_reason()
            .expect("finished runs have a stop reason")
    }

    /// Number of updates applied.
    pub fn iterations(&self) -> usize {
        self.parties.coordinator.iterations()
    }

    pub fn losses(&self) -> &[f64] {
        self.parties.coordinator.losses()
    }

    pub fn host_weights(&self) -> &[f64] {
        self.parties.host.weights()
    }

    pub fn guest_weights(&self) -> &Weights {
        self.parties.guest.weights()
    }

    /// `[w_A | w_B]` with the guest intercept.
    pub fn combined_weights(&self) -> Weights {
        join(self.host_weights(), self.guest_weights())
    }

    /// Combined weights after every update, starting from the projected start.
    pub fn combined_trajectory(&self) -> Vec<Weights> {
        self.parties
            .host
            .trajectory()
            .iter()
            .zip(self.parties.guest.trajectory())
            .map(|(a, b)| join(a, b))
            .collect()
    }
}

fn join(host: &[f64], guest: &Weights) -> Weights {
    let mut w = host.to_vec();
    w.extend_from_slice(&guest.w);
    Weights::new(w, guest.b)
}

impl Parties {
    fn get_mut(&mut self, role: PartyRole) -> &mut dyn Party {
        match role {
            PartyRole::Host => &mut self.host,
            PartyRole::Guest => &mut self.guest,
            PartyRole::Coordinator => &mut self.coordinator,
        }
    }

    fn all_finished(&self) -> bool {
        self.host.is_finished() && self.guest.is_finished() && self.coordinator.is_finished()
    }
}

fn envelope(msg: &ProtocolMessage) -> Result<Envelope, ProtocolError> {
    Ok((msg.from, msg.to, encode_frame(msg)?))
}

fn lockstep_loop(parties: &mut Parties, transcript: &mut Transcript) -> Result<(), ProtocolError> {
    let mut queue = VecDeque::new();
    for role in [PartyRole::Coordinator, PartyRole::Host, PartyRole::Guest] {
        for m in parties.get_mut(role).start()? {
            queue.push_back(envelope(&m)?);
        }
    }
    while let Some((from, to, frame)) = queue.pop_front() {
        transcript.record(from, to, &frame)?;
        let party = parties.get_mut(to);
        let msg = decode_frame(&frame, from, to, party.public_key())?;
        for out in party.handle(msg)? {
            queue.push_back(envelope(&out)?);
        }
    }
    if !parties.all_finished() {
        return Err(ProtocolError::Incomplete("message queue drained".into()));
    }
    Ok(())
}

/// Runs the protocol on the calling thread, delivering frames in FIFO order.
/// Fully deterministic for seeded parties.
pub fn run_lockstep(mut parties: Parties) -> Result<FederatedOutcome, ProtocolFailure> {
    let mut transcript = Transcript::new();
    match lockstep_loop(&mut parties, &mut transcript) {
        Ok(()) => Ok(FederatedOutcome {
            parties,
            transcript,
        }),
        Err(error) => Err(ProtocolFailure { error, transcript }),
    }
}

struct Link {
    inbox: Receiver<Envelope>,
    peers: Vec<(PartyRole, Sender<Envelope>)>,
    transcript: Arc<Mutex<Transcript>>,
    abort: Arc<AtomicBool>,
    timeout: Duration,
}

const POLL: Duration = Duration::from_millis(50);

impl Link {
    fn send(&self, role: PartyRole, msgs: Vec<ProtocolMessage>) -> Result<(), ProtocolError> {
        for m in msgs {
            let env = envelope(&m)?;
            let (_, tx) = self.peers.iter().find(|(r, _)| *r == m.to).ok_or(
                ProtocolError::UnexpectedMessage {
                    role,
                    kind: m.kind(),
                    from: m.from,
                },
            )?;
            tx.send(env).map_err(|_| ProtocolError::PeerAborted(role))?;
        }
        Ok(())
    }

    fn recv(&self, role: PartyRole) -> Result<Envelope, ProtocolError> {
        let started = Instant::now();
        loop {
            if self.abort.load(Ordering::SeqCst) {
                return Err(ProtocolError::PeerAborted(role));
            }
            match self.inbox.recv_timeout(POLL) {
                Ok(env) => return Ok(env),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ProtocolError::PeerAborted(role))
                }
                Err(RecvTimeoutError::Timeout) if started.elapsed() >= self.timeout => {
                    return Err(ProtocolError::Timeout {
                        role,
                        waited: self.timeout,
                    })
                }
                Err(RecvTimeoutError::Timeout) => {}
            }
        }
    }

    fn drive<P: Party>(&self, party: &mut P) -> Result<(), ProtocolError> {
        let role = party.role();
        let first = party.start()?;
        self.send(role, first)?;
        while !party.is_finished() {
            let (from, to, frame) = self.recv(role)?;
            self.transcript
                .lock()
                .expect("transcript lock")
                .record(from, to, &frame)?;
            let msg = decode_frame(&frame, from, to, party.public_key())?;
            let out = party.handle(msg)?;
            self.send(role, out)?;
        }
        Ok(())
    }

    fn run<P: Party>(self, mut party: P) -> (P, Result<(), ProtocolError>) {
        let result = self.drive(&mut party);
        if result.is_err() {
            self.abort.store(true, Ordering::SeqCst);
        }
        (party, result)
    }
}

/// Runs each party on its own thread. A party that waits longer than
/// `timeout` for its next message aborts the run; any abort stops the
/// other parties at their next poll.
pub fn run_threaded(
    parties: Parties,
    timeout: Duration,
) -> Result<FederatedOutcome, ProtocolFailure> {
    let roles = [PartyRole::Host, PartyRole::Guest, PartyRole::Coordinator];
    let (senders, mut receivers): (Vec<_>, Vec<_>) = roles.iter().map(|_| mpsc::channel()).unzip();
    let transcript = Arc::new(Mutex::new(Transcript::new()));
    let abort = Arc::new(AtomicBool::new(false));
    let mut link = |i: usize| Link {
        inbox: receivers.remove(0),
        peers: roles
            .iter()
            .zip(&senders)
            .filter(|(r, _)| **r != roles[i])
            .map(|(r, s)| (*r, s.clone()))
            .collect(),
        transcript: Arc::clone(&transcript),
        abort: Arc::clone(&abort),
        timeout,
    };
    let (lh, lg, lc) = (link(0), link(1), link(2));
    drop(senders);

    let Parties {
        host,
        guest,
        coordinator,
    } = parties;
    let ((host, rh), (guest, rg), (coordinator, rc)) = std::thread::scope(|s| {
        let th = s.spawn(move || lh.run(host));
        let tg = s.spawn(move || lg.run(guest));
        let tc = s.spawn(move || lc.run(coordinator));
        (
            th.join().expect("host thread panicked"),
            tg.join().expect("guest thread panicked"),
            tc.join().expect("coordinator thread panicked"),
        )
    });
    let transcript = std::mem::take(&mut *transcript.lock().expect("transcript lock"));
    let errors: Vec<ProtocolError> = [rh, rg, rc].into_iter().filter_map(Result::err).collect();
    let primary = errors
        .iter()
        .position(|e| !matches!(e, ProtocolError::PeerAborted(_)))
        .unwrap_or(0);
    if let Some(error) = errors.into_iter().nth(primary) {
        return Err(ProtocolFailure { error, transcript });
    }
    Ok(FederatedOutcome {
        parties: Parties {
            host,
            guest,
            coordinator,
        },
        transcript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedproto::{
        audit_privacy, check_flow, setup, Payload, PrivacyContext, ProtocolConfig,
    };
    use crate::lrbc::{train_centralized, BoxBounds, LabeledBatch, TrainConfig};
    use crate::matrix::Matrix;
    use crate::sampling::{guest_initial_weights, host_initial_weights};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn data(rows: usize) -> (Matrix, Matrix, Vec<u8>) {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut y = Vec::new();
        for _ in 0..rows {
            let ra: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let rb: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z = 0.8 * ra[0] + 0.5 * ra[2] + 1.2 * rb[0] - 0.3;
            y.push((rng.gen::<f64>() < 1.0 / (1.0 + (-z).exp())) as u8);
            a.push(ra);
            b.push(rb);
        }
        (Matrix::from_rows(&a), Matrix::from_rows(&b), y)
    }

    fn config() -> ProtocolConfig {
        ProtocolConfig::new(TrainConfig {
            eta: 0.5,
            batch_size: 32,
            max_iter: 12,
            seed: 9,
            ..TrainConfig::default()
        })
        .with_key_bits(512)
        .with_crypto_seed(4)
    }

    #[test]
    fn lockstep_matches_centralized_trajectory() {
        let (xa, xb, y) = data(120);
        let cfg = config();
        let out = run_lockstep(setup(&cfg, xa.clone(), xb.clone(), &y).unwrap()).unwrap();

        let joint = LabeledBatch::from_binary(xa.hconcat(&xb), &y).unwrap();
        let mut w0 = host_initial_weights(3, cfg.train.seed);
        w0.extend(guest_initial_weights(2, cfg.train.seed));
        let central = train_centralized(
            &joint,
            &cfg.train,
            &BoxBounds::nonnegative(5),
            Some(Weights::new(w0, 0.0)),
        )
        .unwrap();

        assert_eq!(out.stop(), central.stop);
        assert_eq!(out.iterations(), central.iterations);
        let fed = out.combined_trajectory();
        assert_eq!(fed.len(), central.trajectory.len());
        for (f, c) in fed.iter().zip(&central.trajectory) {
            assert!(f.max_abs_diff(c) < 1e-9);
        }
        for (f, c) in out.losses().iter().zip(&central.losses) {
            assert!((f - c).abs() < 1e-9);
        }
        assert!(out.host_weights().iter().all(|&w| w >= 0.0));

        let flow = check_flow(&out.transcript).unwrap();
        assert_eq!(flow.updates, out.iterations());
        assert_eq!(out.transcript.len(), 2 + 7 * (out.iterations() + 1));

        let secrets = out.parties.coordinator.private_key().secret_bytes();
        let mut sensitive: Vec<f64> = xa
            .iter_rows()
            .chain(xb.iter_rows())
            .flatten()
            .copied()
            .collect();
        sensitive.extend([0.5, -0.5]);
        let report = audit_privacy(
            &out.transcript,
            &PrivacyContext {
                public_key: out.parties.coordinator.private_key().public_key(),
                secrets: &secrets,
                rows: 120,
                host_dim: 3,
                sensitive_values: &sensitive,
            },
        );
        assert!(report.is_clean(), "{:?}", report.violations);
        assert!(report.host_guest_messages > 0);
    }

    #[test]
    fn threaded_run_agrees_with_lockstep() {
        let (xa, xb, y) = data(80);
        let cfg = config();
        let a = run_lockstep(setup(&cfg, xa.clone(), xb.clone(), &y).unwrap()).unwrap();
        let b = run_threaded(setup(&cfg, xa, xb, &y).unwrap(), Duration::from_secs(30)).unwrap();
        assert_eq!(a.combined_weights(), b.combined_weights());
        assert_eq!(a.losses(), b.losses());
        assert!(check_flow(&b.transcript).is_ok());
    }

    #[test]
    fn mismatched_batch_plan_aborts() {
        let (xa, xb, y) = data(60);
        let cfg = config();
        let mut parties = setup(&cfg, xa, xb, &y).unwrap();
        let pk = parties.coordinator.start().unwrap();
        for m in pk {
            let target = parties.get_mut(m.to);
            target.handle(m).unwrap();
        }
        let forged = ProtocolMessage::new(
            PartyRole::Guest,
            PartyRole::Host,
            0,
            Payload::BatchPlan {
                indices: vec![0, 1, 2],
            },
        );
        assert!(matches!(
            parties.host.handle(forged),
            Err(ProtocolError::BatchMismatch(0))
        ));
        let stale = ProtocolMessage::new(
            PartyRole::Guest,
            PartyRole::Host,
            3,
            Payload::BatchPlan { indices: vec![] },
        );
        assert!(matches!(
            parties.host.handle(stale),
            Err(ProtocolError::IterationMismatch { .. })
        ));
    }

    #[test]
    fn silent_peer_times_out_with_partial_transcript() {
        struct Mute(PartyRole);
        impl Party for Mute {
            fn role(&self) -> PartyRole {
                self.0
            }
            fn public_key(&self) -> Option<&Arc<crate::crypto::PublicKey>> {
                None
            }
            fn start(&mut self) -> Result<Vec<ProtocolMessage>, ProtocolError> {
                Ok(Vec::new())
            }
            fn handle(
                &mut self,
                _: ProtocolMessage,
            ) -> Result<Vec<ProtocolMessage>, ProtocolError> {
                Ok(Vec::new())
            }
            fn is_finished(&self) -> bool {
                false
            }
        }
        let (tx, rx) = mpsc::channel();
        let link = Link {
            inbox: rx,
            peers: vec![(PartyRole::Host, tx)],
            transcript: Arc::new(Mutex::new(Transcript::new())),
            abort: Arc::new(AtomicBool::new(false)),
            timeout: Duration::from_millis(120),
        };
        let (_, result) = link.run(Mute(PartyRole::Guest));
        assert!(matches!(result, Err(ProtocolError::Timeout { .. })));
    }

    #[test]
    fn setup_rejects_misaligned_rows() {
        let (xa, xb, y) = data(30);
        let short = xb.select_rows(&[0, 1, 2]);
        assert!(matches!(
            setup(&config(), xa, short, &y),
            Err(ProtocolError::Setup(_))
        ));
    }
}
