//! Three-party training protocol: host A (features), guest B (features and
//! labels) and coordinator C (Paillier key holder).
//!
//! Parties are sans-IO state machines that consume one [`ProtocolMessage`]
//! and return the messages to send next. [`run_lockstep`] drives them on one
//! thread in FIFO order; [`run_threaded`] gives each party its own thread and
//! channel inbox. Both record every delivered frame in a [`Transcript`].

mod audit;
mod compute;
mod driver;
mod message;
mod party;
mod transcript;

use std::time::Duration;

use thiserror::Error;

use crate::crypto::CryptoError;
use crate::lrbc::{BoxBounds, TrainConfig, TrainError, Weights};

pub use crate::sampling::plan_batch;
pub use audit::{audit_privacy, check_flow, FlowSummary, PrivacyContext, PrivacyReport};
pub use compute::{
    coordinator_step, encrypted_dot, guest_compute, host_forward, host_gradient, party_update,
    CoordinatorDecision, GuestRound,
};
pub use driver::{run_lockstep, run_threaded, FederatedOutcome, ProtocolFailure};
pub use message::{
    decode_frame, encode_frame, peek_header, MessageKind, PartyRole, Payload, ProtocolMessage,
};
pub use party::{setup, CoordinatorParty, GuestParty, HostParty, Parties, Party};
pub use transcript::{PayloadClass, Transcript, TranscriptEntry};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("{0:?} frame arrived before the public key")]
    MissingKey(MessageKind),
    #[error("party {role} cannot handle {kind:?} from {from}")]
    UnexpectedMessage {
        role: PartyRole,
        kind: MessageKind,
        from: PartyRole,
    },
    #[error("party {role} expected iteration {expected}, got {actual}")]
    IterationMismatch {
        role: PartyRole,
        expected: u32,
        actual: u32,
    },
    #[error("batch plan for iteration {0} does not match the shared seed")]
    BatchMismatch(u32),
    #[error("party {role} expected {expected} values, got {actual}")]
    Dimension {
        role: PartyRole,
        expected: usize,
        actual: usize,
    },
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("party {role} received nothing for {waited:?}")]
    Timeout { role: PartyRole, waited: Duration },
    #[error("party {0} stopped because a peer aborted")]
    PeerAborted(PartyRole),
    #[error("run ended without a stop message: {0}")]
    Incomplete(String),
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    /// `train.loss` is ignored: the encrypted path is always the Taylor loss.
    pub train: TrainConfig,
    pub key_bits: u64,
    /// Per-receive timeout for the threaded driver.
    pub timeout: Duration,
    /// Seeds key generation and encryption noise; `None` draws from the OS.
    pub crypto_seed: Option<u64>,
    /// Bounds over `[host features | guest features]`; non-negative if unset.
    pub bounds: Option<BoxBounds>,
    pub host_initial: Option<Vec<f64>>,
    pub guest_initial: Option<Weights>,
}

impl ProtocolConfig {
    pub const DEFAULT_KEY_BITS: u64 = 2048;
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

    pub fn new(train: TrainConfig) -> Self {
        Self {
            train,
            key_bits: Self::DEFAULT_KEY_BITS,
            timeout: Self::DEFAULT_TIMEOUT,
            crypto_seed: None,
            bounds: None,
            host_initial: None,
            guest_initial: None,
        }
    }

    pub fn with_key_bits(mut self, bits: u64) -> Self {
        self.key_bits = bits;
        self
    }

    pub fn with_crypto_seed(mut self, seed: u64) -> Self {
        self.crypto_seed = Some(seed);
        self
    }
}
