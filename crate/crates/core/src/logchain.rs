//! Per-member tamper-evident message log.
//!
//! Every member appends each protocol message it sends or receives to an
//! append-only log whose head is a running hash chain:
//!
//! ```text
//! head_0 = H(session nonce)            (genesis binds the chain to the run)
//! head_n = H(head_{n-1} || entry_n)
//! ```
//!
//! The head is cited inside every signed frame, so an exported transcript is
//! nonrepudiable: replaying the chain over the exported entries must land on
//! the head the member signed.

use thiserror::Error;

use crate::crypto::{hash, hash_parts, Digest};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Direction {
    Sent,
    Received,
}

impl Direction {
    fn byte(self) -> u8 {
        match self {
            Direction::Sent => 0x01,
            Direction::Received => 0x02,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(Direction::Sent),
            0x02 => Some(Direction::Received),
            _ => None,
        }
    }
}

/// One logged message: direction, protocol phase, and the full signed frame
/// bytes as they appeared on the wire.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LogEntry {
    pub direction: Direction,
    pub phase: u8,
    pub message: Vec<u8>,
}

impl LogEntry {
    fn chain_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(2 + self.message.len());
        b.push(self.direction.byte());
        b.push(self.phase);
        b.extend_from_slice(&self.message);
        b
    }
}

/// Hash of a log head `h_phi`.
pub type LogHead = Digest;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LogError {
    #[error("entry phase {new} precedes current phase {current}")]
    PhaseRegression { current: u8, new: u8 },
}

/// Single-writer append-only log owned by one member state machine.
#[derive(Clone, Debug)]
pub struct TamperLog {
    head: LogHead,
    phase: u8,
    entries: Vec<LogEntry>,
}

impl TamperLog {
    pub fn new(session_nonce: &[u8]) -> Self {
        Self {
            head: hash(session_nonce),
            phase: 0,
            entries: Vec::new(),
        }
    }

    pub fn head(&self) -> LogHead {
        self.head
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn append(&mut self, entry: LogEntry) -> Result<LogHead, LogError> {
        if entry.phase < self.phase {
            return Err(LogError::PhaseRegression { current: self.phase, new: entry.phase });
        }
        self.phase = entry.phase;
        self.head = chain_step(&self.head, &entry);
        self.entries.push(entry);
        Ok(self.head)
    }

    /// Raw frame bytes of every entry, in log order: the transcript export
    /// format consumed by the blame verifier.
    pub fn export(&self) -> Vec<(Direction, Vec<u8>)> {
        self.entries
            .iter()
            .map(|e| (e.direction, e.message.clone()))
            .collect()
    }
}

fn chain_step(prev: &LogHead, entry: &LogEntry) -> LogHead {
    hash_parts(&[prev, &entry.chain_bytes()])
}

/// Replay a transcript against a claimed head. Any deletion, reordering or
/// byte flip changes the replayed head.
pub fn verify_transcript(session_nonce: &[u8], entries: &[LogEntry], claimed: &LogHead) -> bool {
    let mut head = hash(session_nonce);
    let mut phase = 0u8;
    for e in entries {
        if e.phase < phase {
            return false;
        }
        phase = e.phase;
        head = chain_step(&head, e);
    }
    head == *claimed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(phase: u8, msg: &[u8]) -> LogEntry {
        LogEntry { direction: Direction::Sent, phase, message: msg.to_vec() }
    }

    #[test]
    fn empty_log_head_is_hash_of_nonce() {
        let log = TamperLog::new(b"nonce");
        assert_eq!(log.head(), hash(b"nonce"));
    }

    #[test]
    fn equal_appends_give_equal_heads() {
        let mut a = TamperLog::new(b"n");
        let mut b = TamperLog::new(b"n");
        let ha = a.append(entry(1, b"m")).unwrap();
        let hb = b.append(entry(1, b"m")).unwrap();
        assert_eq!(ha, hb);
    }

    #[test]
    fn append_order_changes_head() {
        let mut a = TamperLog::new(b"n");
        let mut b = TamperLog::new(b"n");
        a.append(entry(1, b"x")).unwrap();
        a.append(entry(1, b"y")).unwrap();
        b.append(entry(1, b"y")).unwrap();
        b.append(entry(1, b"x")).unwrap();
        assert_ne!(a.head(), b.head());
    }

    #[test]
    fn phase_regression_rejected() {
        let mut log = TamperLog::new(b"n");
        log.append(entry(3, b"m")).unwrap();
        assert_eq!(
            log.append(entry(2, b"m")).unwrap_err(),
            LogError::PhaseRegression { current: 3, new: 2 }
        );
    }

    #[test]
    fn transcript_verifies_and_detects_tampering() {
        let mut log = TamperLog::new(b"n");
        for i in 1..=4u8 {
            log.append(entry(i, &[i; 8])).unwrap();
        }
        let entries = log.entries().to_vec();
        assert!(verify_transcript(b"n", &entries, &log.head()));

        // Delete the middle entry.
        let mut deleted = entries.clone();
        deleted.remove(2);
        assert!(!verify_transcript(b"n", &deleted, &log.head()));

        // Flip one payload byte.
        let mut flipped = entries.clone();
        flipped[1].message[0] ^= 1;
        assert!(!verify_transcript(b"n", &flipped, &log.head()));

        // Wrong session binds to a different genesis.
        assert!(!verify_transcript(b"other", &entries, &log.head()));
    }
}
