//! Signed message framing.
//!
//! Every protocol message travels as a `Frame`: the session nonce, phase,
//! sender and the sender's current log head, followed by the payload and an
//! ed25519 signature over everything before it. Receivers silently drop
//! frames with bad signatures or foreign nonces.
//!
//! Wire layout (big-endian, u32 length prefixes):
//!
//! ```text
//! version(1) nonce(32) phase(1) subphase(1) sender(4) log_head(32)
//! payload_len(4) payload signature(64)
//! ```

use thiserror::Error;

use crate::crypto::{hash_parts, Digest, SigPublicKey, SigningKeyPair, SIG_LEN};
use crate::types::{MemberId, SessionNonce};
use crate::wirebuf::{Reader, Writer, MAX_FIELD};

pub const WIRE_VERSION: u8 = 0x01;

pub const PHASE_KEY: u8 = 1;
pub const PHASE_SUBMIT: u8 = 2;
pub const PHASE_SHUFFLE: u8 = 3;
pub const PHASE_VERIFY: u8 = 4;
pub const PHASE_FINAL: u8 = 5;
/// Wrapper-level control traffic (round proposals, suspicion, aborts);
/// excluded from tamper logs and protocol byte accounting.
pub const PHASE_CONTROL: u8 = 0xf0;

pub const SUB_NONE: u8 = 0x00;
pub const SUB_DECRYPT: u8 = 0x0a;
pub const SUB_BLAME: u8 = 0x0b;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed frame")]
    MalformedFrame,
    #[error("malformed message payload")]
    MalformedMessage,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Frame {
    pub nonce: SessionNonce,
    pub phase: u8,
    pub subphase: u8,
    pub sender: MemberId,
    pub log_head: Digest,
    pub payload: Vec<u8>,
    pub signature: [u8; SIG_LEN],
}

impl Frame {
    pub fn build(
        nonce: SessionNonce,
        phase: u8,
        subphase: u8,
        sender: MemberId,
        log_head: Digest,
        payload: Vec<u8>,
        key: &SigningKeyPair,
    ) -> Frame {
        let mut f = Frame {
            nonce,
            phase,
            subphase,
            sender,
            log_head,
            payload,
            signature: [0u8; SIG_LEN],
        };
        f.signature = key.sign(&f.signing_bytes());
        f
    }

    fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(WIRE_VERSION);
        w.bytes_fixed(&self.nonce);
        w.u8(self.phase);
        w.u8(self.subphase);
        w.u32(self.sender);
        w.bytes_fixed(&self.log_head);
        w.bytes_var(&self.payload);
        w.finish()
    }

    pub fn verify(&self, key: &SigPublicKey) -> bool {
        key.verify(&self.signing_bytes(), &self.signature)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = self.signing_bytes();
        b.extend_from_slice(&self.signature);
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, WireError> {
        let mut r = Reader::new(bytes);
        let parse = |r: &mut Reader| -> Option<Frame> {
            if r.u8()? != WIRE_VERSION {
                return None;
            }
            let nonce = r.bytes_fixed::<32>()?;
            let phase = r.u8()?;
            let subphase = r.u8()?;
            let sender = r.u32()?;
            let log_head = r.bytes_fixed::<32>()?;
            let payload = r.bytes_var()?.to_vec();
            let signature = r.bytes_fixed::<SIG_LEN>()?;
            if !r.is_empty() {
                return None;
            }
            Some(Frame { nonce, phase, subphase, sender, log_head, payload, signature })
        };
        parse(&mut r).ok_or(WireError::MalformedFrame)
    }

    pub fn msg(&self) -> Result<Msg, WireError> {
        Msg::decode(&self.payload)
    }
}

/// Canonical digest of a ciphertext vector, the `hash(C_N)` cited in
/// go/no-go messages.
pub fn vector_digest(items: &[Vec<u8>]) -> Digest {
    let parts: Vec<&[u8]> = items.iter().map(|i| i.as_slice()).collect();
    hash_parts(&parts)
}

/// Reasons a member reports a fault during the anonymization phase.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FaultReason {
    DuplicateCiphertext = 1,
    InvalidCiphertext = 2,
    MalformedStep = 3,
}

impl FaultReason {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(FaultReason::DuplicateCiphertext),
            2 => Some(FaultReason::InvalidCiphertext),
            3 => Some(FaultReason::MalformedStep),
            _ => None,
        }
    }
}

/// Protocol message payloads. The first payload byte is the message kind;
/// the rest is the message body (which is what the per-phase payload byte
/// counters measure).
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Msg {
    /// Phase 1: a member's fresh secondary public key `z_i`.
    SecondaryKey { z: [u8; 32] },
    /// Phase 1: the leader's bundle of all signed secondary-key frames,
    /// relayed verbatim.
    KeyBundle { frames: Vec<Vec<u8>> },
    /// Phase 2: the double-onioned submission `C_i`.
    Submission { onion: Vec<u8> },
    /// Phase 3: a shuffled, peeled ciphertext vector.
    Vector { items: Vec<Vec<u8>> },
    /// Phase 3: a detected duplicate/invalid ciphertext; moves the group to
    /// blame.
    FaultReport { reason: FaultReason, detail: Vec<u8> },
    /// Phase 4: go/no-go flag plus the digest of the final vector.
    GoNoGo { flag: bool, digest: Digest },
    /// Phase 5a: the released secondary private key `w_i`.
    SecondaryPrivate { w: [u8; 32] },
    /// Phase 5b: transcript export and revealed encryption randomness
    /// (encoding owned by the blame module).
    Evidence { bundle: Vec<u8> },
    /// Bulk data transmission: this member's ciphertext for every slot.
    SlotData { body: Vec<u8> },
    /// Control: leader proposes a round configuration.
    Propose { config: Vec<u8> },
    /// Control: member accepts a proposed round.
    ProposeAck,
    /// Control: member demands a reachable peer be added to the roster.
    DemandInclude { member: MemberId },
    /// Control: suspicion report to the leader about a missing message.
    Suspect { suspect: MemberId, phase: u8, subphase: u8 },
    /// Control: leader demands the missing message from the suspect.
    Demand { suspect: MemberId, phase: u8, subphase: u8, requester: MemberId },
    /// Control: the demanded frame, relayed verbatim.
    DemandResponse { frame: Vec<u8> },
    /// Control: leader aborts the round, naming excluded members.
    Abort { excluded: Vec<MemberId> },
    /// Control: delivery acknowledgement for end-to-end reliability.
    Delivered { round_nonce: SessionNonce },
}

impl Msg {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Msg::SecondaryKey { z } => {
                w.u8(0x01);
                w.bytes_fixed(z);
            }
            Msg::KeyBundle { frames } => {
                w.u8(0x02);
                for f in frames {
                    w.bytes_var(f);
                }
            }
            Msg::Submission { onion } => {
                w.u8(0x03);
                w.bytes_fixed(onion);
            }
            Msg::Vector { items } => {
                w.u8(0x04);
                for i in items {
                    w.bytes_var(i);
                }
            }
            Msg::FaultReport { reason, detail } => {
                w.u8(0x05);
                w.u8(*reason as u8);
                w.bytes_var(detail);
            }
            Msg::GoNoGo { flag, digest } => {
                w.u8(0x06);
                w.u8(u8::from(*flag));
                w.bytes_fixed(digest);
            }
            Msg::SecondaryPrivate { w: key } => {
                w.u8(0x07);
                w.bytes_fixed(key);
            }
            Msg::Evidence { bundle } => {
                w.u8(0x08);
                w.bytes_fixed(bundle);
            }
            Msg::SlotData { body } => {
                w.u8(0x10);
                w.bytes_fixed(body);
            }
            Msg::Propose { config } => {
                w.u8(0x20);
                w.bytes_fixed(config);
            }
            Msg::ProposeAck => w.u8(0x21),
            Msg::DemandInclude { member } => {
                w.u8(0x22);
                w.u32(*member);
            }
            Msg::Suspect { suspect, phase, subphase } => {
                w.u8(0x23);
                w.u32(*suspect);
                w.u8(*phase);
                w.u8(*subphase);
            }
            Msg::Demand { suspect, phase, subphase, requester } => {
                w.u8(0x24);
                w.u32(*suspect);
                w.u8(*phase);
                w.u8(*subphase);
                w.u32(*requester);
            }
            Msg::DemandResponse { frame } => {
                w.u8(0x25);
                w.bytes_fixed(frame);
            }
            Msg::Abort { excluded } => {
                w.u8(0x26);
                w.u32(excluded.len() as u32);
                for m in excluded {
                    w.u32(*m);
                }
            }
            Msg::Delivered { round_nonce } => {
                w.u8(0x27);
                w.bytes_fixed(round_nonce);
            }
        }
        w.finish()
    }

    pub fn decode(payload: &[u8]) -> Result<Msg, WireError> {
        let mut r = Reader::new(payload);
        let kind = r.u8().ok_or(WireError::MalformedMessage)?;
        let parse = |r: &mut Reader| -> Option<Msg> {
            let msg = match kind {
                0x01 => Msg::SecondaryKey { z: r.bytes_fixed::<32>()? },
                0x02 => {
                    let mut frames = Vec::new();
                    while !r.is_empty() {
                        frames.push(r.bytes_var()?.to_vec());
                    }
                    Msg::KeyBundle { frames }
                }
                0x03 => Msg::Submission { onion: r.bytes_slice(r.remaining())?.to_vec() },
                0x04 => {
                    let mut items = Vec::new();
                    while !r.is_empty() {
                        items.push(r.bytes_var()?.to_vec());
                    }
                    Msg::Vector { items }
                }
                0x05 => Msg::FaultReport {
                    reason: FaultReason::from_byte(r.u8()?)?,
                    detail: r.bytes_var()?.to_vec(),
                },
                0x06 => Msg::GoNoGo {
                    flag: match r.u8()? {
                        0 => false,
                        1 => true,
                        _ => return None,
                    },
                    digest: r.bytes_fixed::<32>()?,
                },
                0x07 => Msg::SecondaryPrivate { w: r.bytes_fixed::<32>()? },
                0x08 => Msg::Evidence { bundle: r.bytes_slice(r.remaining())?.to_vec() },
                0x10 => Msg::SlotData { body: r.bytes_slice(r.remaining())?.to_vec() },
                0x20 => Msg::Propose { config: r.bytes_slice(r.remaining())?.to_vec() },
                0x21 => Msg::ProposeAck,
                0x22 => Msg::DemandInclude { member: r.u32()? },
                0x23 => Msg::Suspect { suspect: r.u32()?, phase: r.u8()?, subphase: r.u8()? },
                0x24 => Msg::Demand {
                    suspect: r.u32()?,
                    phase: r.u8()?,
                    subphase: r.u8()?,
                    requester: r.u32()?,
                },
                0x25 => Msg::DemandResponse { frame: r.bytes_slice(r.remaining())?.to_vec() },
                0x26 => {
                    let count = r.u32()? as usize;
                    if count > 1 << 16 {
                        return None;
                    }
                    let mut excluded = Vec::with_capacity(count);
                    for _ in 0..count {
                        excluded.push(r.u32()?);
                    }
                    Msg::Abort { excluded }
                }
                0x27 => Msg::Delivered { round_nonce: r.bytes_fixed::<32>()? },
                _ => return None,
            };
            if !r.is_empty() {
                return None;
            }
            Some(msg)
        };
        if payload.len() > MAX_FIELD {
            return Err(WireError::MalformedMessage);
        }
        parse(&mut r).ok_or(WireError::MalformedMessage)
    }

    /// Payload body length: everything after the kind byte. This is the
    /// quantity the per-phase byte-count laws are stated over.
    pub fn body_len(payload: &[u8]) -> usize {
        payload.len().saturating_sub(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen_signing;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn key() -> SigningKeyPair {
        keygen_signing(&mut ChaCha20Rng::from_seed([1u8; 32]))
    }

    fn sample_frame() -> Frame {
        Frame::build(
            [7u8; 32],
            PHASE_KEY,
            SUB_NONE,
            3,
            [9u8; 32],
            Msg::SecondaryKey { z: [5u8; 32] }.encode(),
            &key(),
        )
    }

    #[test]
    fn frame_roundtrip_preserves_fields() {
        let f = sample_frame();
        let decoded = Frame::decode(&f.encode()).unwrap();
        assert_eq!(decoded, f);
        assert!(decoded.verify(&key().public()));
        assert_eq!(decoded.msg().unwrap(), Msg::SecondaryKey { z: [5u8; 32] });
    }

    #[test]
    fn truncation_at_every_boundary_is_malformed() {
        let enc = sample_frame().encode();
        for cut in 0..enc.len() {
            assert_eq!(Frame::decode(&enc[..cut]).unwrap_err(), WireError::MalformedFrame);
        }
        let mut extended = enc.clone();
        extended.push(0);
        assert_eq!(Frame::decode(&extended).unwrap_err(), WireError::MalformedFrame);
    }

    #[test]
    fn flipped_signature_byte_decodes_but_fails_verification() {
        let f = sample_frame();
        let mut enc = f.encode();
        let last = enc.len() - 1;
        enc[last] ^= 0x40;
        let decoded = Frame::decode(&enc).unwrap();
        assert!(!decoded.verify(&key().public()));
    }

    #[test]
    fn message_roundtrips() {
        let msgs = vec![
            Msg::SecondaryKey { z: [1u8; 32] },
            Msg::KeyBundle { frames: vec![vec![1, 2], vec![], vec![3]] },
            Msg::Submission { onion: vec![9; 40] },
            Msg::Vector { items: vec![vec![1; 8], vec![2; 8]] },
            Msg::FaultReport { reason: FaultReason::DuplicateCiphertext, detail: vec![4] },
            Msg::GoNoGo { flag: true, digest: [3u8; 32] },
            Msg::SecondaryPrivate { w: [8u8; 32] },
            Msg::Evidence { bundle: vec![1, 2, 3] },
            Msg::SlotData { body: vec![0; 13] },
            Msg::Propose { config: vec![5; 10] },
            Msg::ProposeAck,
            Msg::DemandInclude { member: 4 },
            Msg::Suspect { suspect: 2, phase: 3, subphase: 0 },
            Msg::Demand { suspect: 2, phase: 3, subphase: 0, requester: 5 },
            Msg::DemandResponse { frame: vec![6; 20] },
            Msg::Abort { excluded: vec![2, 7] },
            Msg::Delivered { round_nonce: [4u8; 32] },
        ];
        for m in msgs {
            assert_eq!(Msg::decode(&m.encode()).unwrap(), m, "roundtrip of {m:?}");
        }
    }

    #[test]
    fn vector_digest_is_order_sensitive() {
        let a = vec![vec![1u8; 4], vec![2u8; 4]];
        let b = vec![vec![2u8; 4], vec![1u8; 4]];
        assert_ne!(vector_digest(&a), vector_digest(&b));
        assert_eq!(vector_digest(&a), vector_digest(&a.clone()));
    }
}
