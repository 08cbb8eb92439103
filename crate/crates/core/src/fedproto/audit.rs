//! Transcript checks: message-flow conformance and privacy.

use std::collections::HashSet;
use std::sync::Arc;

use super::message::{decode_frame, MessageKind, PartyRole, Payload};
use super::transcript::Transcript;
use crate::crypto::PublicKey;
use crate::lrbc::StopReason;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSummary {
    /// Rounds that ended in a gradient update.
    pub updates: usize,
    pub stop: StopReason,
}

/// Checks the delivered sequence against
/// `PubKey x2, (BatchPlan, EncScores, EncResidual, EncLossAndGrad x2, PlainGrad x2)*`
/// followed by a final round that ends in `Stop x2` instead of `PlainGrad x2`.
///
/// Within a round the two coordinator-bound messages and the two
/// coordinator replies may arrive in either order, so each round is checked
/// as a set plus its causal constraints.
pub fn check_flow(transcript: &Transcript) -> Result<FlowSummary, String> {
    let entries = transcript.entries();
    for e in entries {
        if !e.kind.allowed_routes().contains(&(e.from, e.to)) {
            return Err(format!(
                "#{}: {:?} not allowed on {}->{}",
                e.seq, e.kind, e.from, e.to
            ));
        }
    }
    if entries.len() < 2 || entries[..2].iter().any(|e| e.kind != MessageKind::PubKey) {
        return Err("transcript must open with two PubKey messages".into());
    }
    let keyed: HashSet<PartyRole> = entries[..2].iter().map(|e| e.to).collect();
    if keyed.len() != 2 {
        return Err("PubKey must reach both the host and the guest".into());
    }
    let rest = &entries[2..];
    let mut start = 0;
    let mut round = 0u32;
    let mut updates = 0;
    while start < rest.len() {
        let end = rest[start..]
            .iter()
            .position(|e| e.iteration != round)
            .map_or(rest.len(), |p| start + p);
        let block = &rest[start..end];
        let pos = |kind: MessageKind, from: PartyRole, to: PartyRole| {
            block
                .iter()
                .position(|e| e.kind == kind && e.from == from && e.to == to)
                .ok_or_else(|| format!("round {round}: missing {kind:?} {from}->{to}"))
        };
        use MessageKind::*;
        use PartyRole::*;
        let plan = pos(BatchPlan, Guest, Host)?;
        let scores = pos(EncScores, Host, Guest)?;
        let resid = pos(EncResidual, Guest, Host)?;
        let grad_a = pos(EncLossAndGrad, Host, Coordinator)?;
        let grad_b = pos(EncLossAndGrad, Guest, Coordinator)?;
        let stopping = block.iter().any(|e| e.kind == Stop);
        let reply = if stopping { Stop } else { PlainGrad };
        let reply_a = pos(reply, Coordinator, Host)?;
        let reply_b = pos(reply, Coordinator, Guest)?;
        if block.len() != 7 {
            return Err(format!(
                "round {round}: expected 7 messages, found {}",
                block.len()
            ));
        }
        let ordered = plan < scores
            && scores < resid
            && scores < grad_b
            && resid < grad_a
            && grad_a.max(grad_b) < reply_a.min(reply_b);
        if !ordered {
            return Err(format!("round {round}: messages out of causal order"));
        }
        if stopping {
            if end != rest.len() {
                return Err(format!("round {round}: messages after Stop"));
            }
            let reason = match transcript_stop_reason(&block[reply_a].frame) {
                Some(r) => r,
                None => return Err("unreadable Stop frame".into()),
            };
            return Ok(FlowSummary {
                updates,
                stop: reason,
            });
        }
        updates += 1;
        round += 1;
        start = end;
    }
    Err(format!(
        "transcript ends after {updates} rounds without Stop"
    ))
}

fn transcript_stop_reason(frame: &[u8]) -> Option<StopReason> {
    match decode_frame(frame, PartyRole::Coordinator, PartyRole::Host, None)
        .ok()?
        .payload
    {
        Payload::Stop { reason } => Some(reason),
        _ => None,
    }
}

/// What the privacy audit needs to know besides the transcript.
pub struct PrivacyContext<'a> {
    pub public_key: &'a Arc<PublicKey>,
    /// Byte strings of the private key material (`lambda`, `mu`).
    pub secrets: &'a [Vec<u8>],
    /// Aligned row count; batch indices must stay below it.
    pub rows: usize,
    pub host_dim: usize,
    /// Plaintext values whose 8-byte big-endian encodings must not appear in
    /// any host/guest frame (raw features, label terms).
    pub sensitive_values: &'a [f64],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrivacyReport {
    pub messages: usize,
    pub host_guest_messages: usize,
    pub ciphertexts: usize,
    pub violations: Vec<String>,
}

impl PrivacyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn ciphertext_bodies(payload: &Payload) -> Vec<Vec<u8>> {
    let cts: Vec<&crate::crypto::Ciphertext> = match payload {
        Payload::EncScores { scores, squares } => scores.iter().chain(squares).collect(),
        Payload::EncResidual { residuals } => residuals.iter().collect(),
        Payload::EncLossAndGrad { loss, gradient, .. } => loss.iter().chain(gradient).collect(),
        _ => Vec::new(),
    };
    cts.into_iter().map(|c| c.to_wire().0).collect()
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Verifies that
/// - host/guest traffic is only row indices or valid ciphertexts,
/// - nothing sent to the host carries labels or guest-side plaintext,
/// - no frame contains private-key bytes,
/// - no ciphertext on the host/guest link embeds the encoding of a listed
///   sensitive value.
pub fn audit_privacy(transcript: &Transcript, ctx: &PrivacyContext<'_>) -> PrivacyReport {
    let mut report = PrivacyReport::default();
    let sensitive: HashSet<[u8; 8]> = ctx
        .sensitive_values
        .iter()
        .map(|v| v.to_be_bytes())
        .collect();
    for e in transcript.entries() {
        report.messages += 1;
        let mut found: Vec<String> = Vec::new();
        let mut flag = |what: String| found.push(format!("#{} {:?}: {what}", e.seq, e.kind));
        if !e.kind.allowed_routes().contains(&(e.from, e.to)) {
            flag(format!("route {}->{} not allowed", e.from, e.to));
        }
        for secret in ctx.secrets {
            if contains(&e.frame, secret) {
                flag("frame contains private key material".into());
            }
        }
        let msg = match decode_frame(&e.frame, e.from, e.to, Some(ctx.public_key)) {
            Ok(m) => m,
            Err(err) => {
                flag(format!("undecodable frame: {err}"));
                report.violations.extend(found);
                continue;
            }
        };
        let peer_link = matches!(
            (e.from, e.to),
            (PartyRole::Host, PartyRole::Guest) | (PartyRole::Guest, PartyRole::Host)
        );
        let mut n_cts = 0;
        match &msg.payload {
            Payload::BatchPlan { indices } => {
                if indices.iter().any(|&i| i as usize >= ctx.rows) {
                    flag("batch index out of range".into());
                }
            }
            Payload::EncScores { scores, squares } => n_cts = scores.len() + squares.len(),
            Payload::EncResidual { residuals } => n_cts = residuals.len(),
            Payload::EncLossAndGrad { loss, gradient, .. } => {
                n_cts = gradient.len() + loss.is_some() as usize;
                if loss.is_some() && e.from != PartyRole::Guest {
                    flag("only the guest may send the loss".into());
                }
            }
            Payload::PlainGrad { gradient } => {
                if e.to == PartyRole::Host && gradient.len() != ctx.host_dim {
                    flag("host received a gradient of the wrong shape".into());
                }
            }
            Payload::PubKey { n } => {
                if *n != ctx.public_key.to_bytes() {
                    flag("PubKey carries something other than the modulus".into());
                }
            }
            Payload::Stop { .. } => {}
        }
        report.ciphertexts += n_cts;
        if peer_link {
            report.host_guest_messages += 1;
            if !matches!(
                msg.kind(),
                MessageKind::BatchPlan | MessageKind::EncScores | MessageKind::EncResidual
            ) {
                flag("host/guest link carries a non-ciphertext payload".into());
            }
            let leaks = ciphertext_bodies(&msg.payload).iter().any(|body| {
                body.windows(8)
                    .any(|w| sensitive.contains(<&[u8; 8]>::try_from(w).expect("8 bytes")))
            });
            if leaks {
                flag("ciphertext body contains the encoding of a plaintext data value".into());
            }
        }
        if e.to == PartyRole::Host
            && !matches!(
                msg.kind(),
                MessageKind::PubKey
                    | MessageKind::BatchPlan
                    | MessageKind::EncResidual
                    | MessageKind::PlainGrad
                    | MessageKind::Stop
            )
        {
            flag("unexpected payload delivered to the host".into());
        }
        report.violations.extend(found);
    }
    report
}
