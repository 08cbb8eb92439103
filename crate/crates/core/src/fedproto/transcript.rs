//! Delivery log of every protocol frame.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::message::{peek_header, MessageKind, PartyRole};
use super::ProtocolError;

/// Coarse description of what a frame carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadClass {
    PublicKey,
    RowIndices,
    Ciphertexts,
    /// Ciphertexts plus the sender's plaintext weight-move scalar.
    CiphertextsWithDelta,
    PlaintextGradient,
    Control,
}

impl PayloadClass {
    pub fn of(kind: MessageKind) -> Self {
        match kind {
            MessageKind::PubKey => PayloadClass::PublicKey,
            MessageKind::BatchPlan => PayloadClass::RowIndices,
            MessageKind::EncScores | MessageKind::EncResidual => PayloadClass::Ciphertexts,
            MessageKind::EncLossAndGrad => PayloadClass::CiphertextsWithDelta,
            MessageKind::PlainGrad => PayloadClass::PlaintextGradient,
            MessageKind::Stop => PayloadClass::Control,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TranscriptEntry {
    pub seq: usize,
    pub kind: MessageKind,
    pub from: PartyRole,
    pub to: PartyRole,
    pub iteration: u32,
    pub bytes: usize,
    pub sha256: String,
    pub class: PayloadClass,
    /// Kept in memory for audits, left out of exports.
    #[serde(skip)]
    pub frame: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Logs a delivered frame. Frames with an unreadable header are rejected.
    pub fn record(
        &mut self,
        from: PartyRole,
        to: PartyRole,
        frame: &[u8],
    ) -> Result<&TranscriptEntry, ProtocolError> {
        let (kind, iteration) = peek_header(frame)?;
        self.entries.push(TranscriptEntry {
            seq: self.entries.len(),
            kind,
            from,
            to,
            iteration,
            bytes: frame.len(),
            sha256: hex::encode(Sha256::digest(frame)),
            class: PayloadClass::of(kind),
            frame: frame.to_vec(),
        });
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.iter().map(|e| e.bytes).sum()
    }

    pub fn count(&self, kind: MessageKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    /// Entries sorted into protocol order (iteration, message kind, sender,
    /// receiver) and renumbered. Threaded runs deliver concurrent messages in
    /// varying order; this view is identical across repeated seeded runs.
    pub fn canonicalized(&self) -> Transcript {
        let mut entries = self.entries.clone();
        entries.sort_by_key(|e| (e.iteration, e.kind as u8, e.from, e.to));
        for (i, e) in entries.iter_mut().enumerate() {
            e.seq = i;
        }
        Transcript { entries }
    }

    /// One JSON object per line, without frame bodies.
    pub fn write_json_lines<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_json_lines(&self, path: &Path) -> io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = io::BufWriter::new(file);
        self.write_json_lines(&mut out)?;
        out.flush()
    }

    /// Multi-line human summary, used in timeout and abort reports.
    pub fn dump(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                format!(
                    "#{} it={} {}->{} {:?} {}B",
                    e.seq, e.iteration, e.from, e.to, e.kind, e.bytes
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}
