//! Typed protocol messages and their length-prefixed byte framing.
//!
//! Frame layout: 4-byte big-endian length of everything that follows, 1-byte
//! kind tag, 4-byte big-endian iteration, then the kind-specific payload.
//! A ciphertext is a 4-byte length, its big-endian value bytes and a signed
//! 32-bit exponent.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::crypto::{Ciphertext, PublicKey};
use crate::lrbc::StopReason;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartyRole {
    /// Party A, features only.
    Host,
    /// Party B, features and labels.
    Guest,
    /// Key holder; decrypts and decides when to stop.
    Coordinator,
}

impl PartyRole {
    pub fn tag(self) -> char {
        match self {
            PartyRole::Host => 'A',
            PartyRole::Guest => 'B',
            PartyRole::Coordinator => 'C',
        }
    }
}

impl fmt::Display for PartyRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageKind {
    PubKey = 1,
    BatchPlan = 2,
    EncScores = 3,
    EncResidual = 4,
    EncLossAndGrad = 5,
    PlainGrad = 6,
    Stop = 7,
}

impl MessageKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => MessageKind::PubKey,
            2 => MessageKind::BatchPlan,
            3 => MessageKind::EncScores,
            4 => MessageKind::EncResidual,
            5 => MessageKind::EncLossAndGrad,
            6 => MessageKind::PlainGrad,
            7 => MessageKind::Stop,
            _ => return None,
        })
    }

    /// The only (sender, receiver) pairs this kind may travel on.
    pub fn allowed_routes(self) -> &'static [(PartyRole, PartyRole)] {
        use PartyRole::*;
        match self {
            MessageKind::PubKey => &[(Coordinator, Host), (Coordinator, Guest)],
            MessageKind::BatchPlan => &[(Guest, Host)],
            MessageKind::EncScores => &[(Host, Guest)],
            MessageKind::EncResidual => &[(Guest, Host)],
            MessageKind::EncLossAndGrad => &[(Host, Coordinator), (Guest, Coordinator)],
            MessageKind::PlainGrad => &[(Coordinator, Host), (Coordinator, Guest)],
            MessageKind::Stop => &[(Coordinator, Host), (Coordinator, Guest)],
        }
    }
}

#[derive(Debug, Clone)]
pub enum Payload {
    PubKey {
        n: Vec<u8>,
    },
    BatchPlan {
        indices: Vec<u32>,
    },
    /// `[[u_A[i]]]` and `[[u_A[i]^2]]` for the batch rows.
    EncScores {
        scores: Vec<Ciphertext>,
        squares: Vec<Ciphertext>,
    },
    /// `[[d_i]]` for the batch rows.
    EncResidual {
        residuals: Vec<Ciphertext>,
    },
    /// Header `weight_delta` is the sender's infinity-norm move from its
    /// previous update; only the guest attaches the loss.
    EncLossAndGrad {
        weight_delta: Option<f64>,
        loss: Option<Ciphertext>,
        gradient: Vec<Ciphertext>,
    },
    PlainGrad {
        gradient: Vec<f64>,
    },
    Stop {
        reason: StopReason,
    },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::PubKey { .. } => MessageKind::PubKey,
            Payload::BatchPlan { .. } => MessageKind::BatchPlan,
            Payload::EncScores { .. } => MessageKind::EncScores,
            Payload::EncResidual { .. } => MessageKind::EncResidual,
            Payload::EncLossAndGrad { .. } => MessageKind::EncLossAndGrad,
            Payload::PlainGrad { .. } => MessageKind::PlainGrad,
            Payload::Stop { .. } => MessageKind::Stop,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolMessage {
    pub from: PartyRole,
    pub to: PartyRole,
    pub iteration: u32,
    pub payload: Payload,
}

impl ProtocolMessage {
    pub fn new(from: PartyRole, to: PartyRole, iteration: u32, payload: Payload) -> Self {
        Self {
            from,
            to,
            iteration,
            payload,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}

const HAS_DELTA: u8 = 0b01;
const HAS_LOSS: u8 = 0b10;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<(), ProtocolError> {
    let n = u32::try_from(n).map_err(|_| ProtocolError::Frame("payload too large".into()))?;
    put_u32(out, n);
    Ok(())
}

fn put_ct(out: &mut Vec<u8>, c: &Ciphertext) -> Result<(), ProtocolError> {
    let (bytes, exponent) = c.to_wire();
    put_len(out, bytes.len())?;
    out.extend_from_slice(&bytes);
    out.extend_from_slice(&exponent.to_be_bytes());
    Ok(())
}

fn put_cts(out: &mut Vec<u8>, cs: &[Ciphertext]) -> Result<(), ProtocolError> {
    put_len(out, cs.len())?;
    cs.iter().try_for_each(|c| put_ct(out, c))
}

/// Serializes a message to a complete frame.
pub fn encode_frame(msg: &ProtocolMessage) -> Result<Vec<u8>, ProtocolError> {
    let mut body = vec![msg.kind() as u8];
    put_u32(&mut body, msg.iteration);
    match &msg.payload {
        Payload::PubKey { n } => {
            put_len(&mut body, n.len())?;
            body.extend_from_slice(n);
        }
        Payload::BatchPlan { indices } => {
            put_len(&mut body, indices.len())?;
            indices.iter().for_each(|&i| put_u32(&mut body, i));
        }
        Payload::EncScores { scores, squares } => {
            put_cts(&mut body, scores)?;
            put_cts(&mut body, squares)?;
        }
        Payload::EncResidual { residuals } => put_cts(&mut body, residuals)?,
        Payload::EncLossAndGrad {
            weight_delta,
            loss,
            gradient,
        } => {
            let mut flags = 0;
            if weight_delta.is_some() {
                flags |= HAS_DELTA;
            }
            if loss.is_some() {
                flags |= HAS_LOSS;
            }
            body.push(flags);
            if let Some(d) = weight_delta {
                body.extend_from_slice(&d.to_be_bytes());
            }
            if let Some(l) = loss {
                put_ct(&mut body, l)?;
            }
            put_cts(&mut body, gradient)?;
        }
        Payload::PlainGrad { gradient } => {
            put_len(&mut body, gradient.len())?;
            gradient
                .iter()
                .for_each(|g| body.extend_from_slice(&g.to_be_bytes()));
        }
        Payload::Stop { reason } => body.push(match reason {
            StopReason::LossPlateau => 1,
            StopReason::WeightsStalled => 2,
            StopReason::MaxIter => 3,
        }),
    }
    let mut frame = Vec::with_capacity(body.len() + 4);
    put_len(&mut frame, body.len())?;
    frame.extend_from_slice(&body);
    Ok(frame)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ProtocolError::Frame("truncated frame".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_be_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn i32(&mut self) -> Result<i32, ProtocolError> {
        Ok(i32::from_be_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_be_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn count(&mut self) -> Result<usize, ProtocolError> {
        let n = self.u32()? as usize;
        // Every element occupies at least four bytes.
        if n > (self.bytes.len() - self.pos) / 4 + 1 {
            return Err(ProtocolError::Frame(format!(
                "implausible element count {n}"
            )));
        }
        Ok(n)
    }

    fn ct(&mut self, key: &Arc<PublicKey>) -> Result<Ciphertext, ProtocolError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        let exponent = self.i32()?;
        Ok(Ciphertext::from_wire(bytes, exponent, key)?)
    }

    fn cts(&mut self, key: &Arc<PublicKey>) -> Result<Vec<Ciphertext>, ProtocolError> {
        let n = self.count()?;
        (0..n).map(|_| self.ct(key)).collect()
    }
}

/// Reads `(kind, iteration)` without decoding the payload.
pub fn peek_header(frame: &[u8]) -> Result<(MessageKind, u32), ProtocolError> {
    if frame.len() < 9 {
        return Err(ProtocolError::Frame("frame shorter than header".into()));
    }
    let kind = MessageKind::from_tag(frame[4])
        .ok_or_else(|| ProtocolError::Frame(format!("unknown kind tag {}", frame[4])))?;
    let iteration = u32::from_be_bytes(frame[5..9].try_into().expect("4 bytes"));
    Ok((kind, iteration))
}

/// Decodes a frame. Ciphertext payloads are bound to `key`, which is only
/// optional for `PubKey` frames.
pub fn decode_frame(
    frame: &[u8],
    from: PartyRole,
    to: PartyRole,
    key: Option<&Arc<PublicKey>>,
) -> Result<ProtocolMessage, ProtocolError> {
    let mut cur = Cursor {
        bytes: frame,
        pos: 0,
    };
    let len = cur.u32()? as usize;
    if len != frame.len() - 4 {
        return Err(ProtocolError::Frame(format!(
            "length prefix {len} does not match {} body bytes",
            frame.len() - 4
        )));
    }
    let tag = cur.u8()?;
    let kind = MessageKind::from_tag(tag)
        .ok_or_else(|| ProtocolError::Frame(format!("unknown kind tag {tag}")))?;
    let iteration = cur.u32()?;
    let need_key = || key.ok_or(ProtocolError::MissingKey(kind));
    let payload = match kind {
        MessageKind::PubKey => {
            let n = cur.u32()? as usize;
            Payload::PubKey {
                n: cur.take(n)?.to_vec(),
            }
        }
        MessageKind::BatchPlan => {
            let n = cur.count()?;
            Payload::BatchPlan {
                indices: (0..n).map(|_| cur.u32()).collect::<Result<_, _>>()?,
            }
        }
        MessageKind::EncScores => {
            let key = need_key()?;
            let scores = cur.cts(key)?;
            let squares = cur.cts(key)?;
            Payload::EncScores { scores, squares }
        }
        MessageKind::EncResidual => Payload::EncResidual {
            residuals: cur.cts(need_key()?)?,
        },
        MessageKind::EncLossAndGrad => {
            let key = need_key()?;
            let flags = cur.u8()?;
            let weight_delta = if flags & HAS_DELTA != 0 {
                Some(cur.f64()?)
            } else {
                None
            };
            let loss = if flags & HAS_LOSS != 0 {
                Some(cur.ct(key)?)
            } else {
                None
            };
            Payload::EncLossAndGrad {
                weight_delta,
                loss,
                gradient: cur.cts(key)?,
            }
        }
        MessageKind::PlainGrad => {
            let n = cur.count()?;
            Payload::PlainGrad {
                gradient: (0..n).map(|_| cur.f64()).collect::<Result<_, _>>()?,
            }
        }
        MessageKind::Stop => Payload::Stop {
            reason: match cur.u8()? {
                1 => StopReason::LossPlateau,
                2 => StopReason::WeightsStalled,
                3 => StopReason::MaxIter,
                r => return Err(ProtocolError::Frame(format!("unknown stop reason {r}"))),
            },
        },
    };
    if cur.pos != frame.len() {
        return Err(ProtocolError::Frame("trailing bytes after payload".into()));
    }
    Ok(ProtocolMessage {
        from,
        to,
        iteration,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{decrypt, encrypt, keygen};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn header_layout() {
        let msg = ProtocolMessage::new(
            PartyRole::Guest,
            PartyRole::Host,
            0x0102_0304,
            Payload::BatchPlan {
                indices: vec![5, 9],
            },
        );
        let frame = encode_frame(&msg).unwrap();
        assert_eq!(&frame[..4], &((frame.len() - 4) as u32).to_be_bytes());
        assert_eq!(frame[4], MessageKind::BatchPlan as u8);
        assert_eq!(&frame[5..9], &[1, 2, 3, 4]);
        assert_eq!(&frame[9..13], &2u32.to_be_bytes());
        assert_eq!(
            peek_header(&frame).unwrap(),
            (MessageKind::BatchPlan, 0x0102_0304)
        );
    }

    #[test]
    fn ciphertext_payload_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let kp = keygen(512, &mut rng).unwrap();
        let mut ct = |x| encrypt(&kp.public, x, &mut rng).unwrap();
        let msg = ProtocolMessage::new(
            PartyRole::Guest,
            PartyRole::Coordinator,
            4,
            Payload::EncLossAndGrad {
                weight_delta: Some(0.125),
                loss: Some(ct(0.69)),
                gradient: vec![ct(-0.5), ct(0.25)],
            },
        );
        let frame = encode_frame(&msg).unwrap();
        let back = decode_frame(
            &frame,
            PartyRole::Guest,
            PartyRole::Coordinator,
            Some(&kp.public),
        )
        .unwrap();
        match back.payload {
            Payload::EncLossAndGrad {
                weight_delta,
                loss,
                gradient,
            } => {
                assert_eq!(weight_delta, Some(0.125));
                assert_eq!(decrypt(&kp.private, &loss.unwrap()).unwrap(), 0.69);
                assert_eq!(decrypt(&kp.private, &gradient[0]).unwrap(), -0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_corrupt_frames() {
        let msg = ProtocolMessage::new(
            PartyRole::Coordinator,
            PartyRole::Host,
            1,
            Payload::PlainGrad {
                gradient: vec![0.5],
            },
        );
        let mut frame = encode_frame(&msg).unwrap();
        frame.push(0);
        assert!(decode_frame(&frame, PartyRole::Coordinator, PartyRole::Host, None).is_err());
        frame.truncate(frame.len() - 3);
        assert!(decode_frame(&frame, PartyRole::Coordinator, PartyRole::Host, None).is_err());
        let mut bad_tag = encode_frame(&msg).unwrap();
        bad_tag[4] = 99;
        assert!(decode_frame(&bad_tag, PartyRole::Coordinator, PartyRole::Host, None).is_err());
    }
}
