//! Blame-phase evidence and the verdict logic.
//!
//! When a run fails, every member exports its tamper-evident log together
//! with its revealed intermediate ciphertext and recorded onion randomness.
//! From that evidence alone, any third party can replay every submission's
//! encryption layer stack and check each anonymization step, which turns
//! the failure into a deterministic verdict:
//!
//! * two distinct signed messages by one member for the same phase expose
//!   the signer (equivocation);
//! * a secondary key that does not parse exposes its signer (bad key);
//! * a submission whose replayed onion differs from the signed ciphertext
//!   exposes the submitter, as do two submissions whose layer stacks
//!   collide (bad submission);
//! * the first anonymization step whose output is not the peeled
//!   permutation of its input exposes that shuffler (bad shuffle step);
//! * a no-go vote whose ciphertext demonstrably survived exposes the voter
//!   (false no-go), and a vote citing a digest that differs from the
//!   broadcast final vector exposes the voter (wrong hash);
//! * a released secondary private key that does not match its public key
//!   exposes the releaser.
//!
//! An empty verdict is a valid outcome: it means the blame phase was
//! entered spuriously.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::crypto::{matches, Digest, KEY_LEN};
use crate::logchain::{verify_transcript, Direction, LogEntry};
use crate::onion::{self, RandomnessTrace};
use crate::types::{MemberId, RoundConfig};
use crate::wire::{vector_digest, Frame, Msg, PHASE_KEY, PHASE_SHUFFLE, PHASE_SUBMIT, PHASE_VERIFY};
use crate::wirebuf::{Reader, Writer};

/// Revealed phase-2 material: the intermediate ciphertext and the recorded
/// randomness of every primary-key encryption layer.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Reveal {
    pub cprime: Vec<u8>,
    pub trace: RandomnessTrace,
}

/// One member's contribution to the blame phase.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EvidenceBundle {
    pub member: MemberId,
    pub reveal: Option<Reveal>,
    /// Exported log: every sent/received signed frame, in log order.
    pub entries: Vec<(Direction, Vec<u8>)>,
    /// The log head the chain must replay to.
    pub head: Digest,
}

impl EvidenceBundle {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.member);
        match &self.reveal {
            None => w.u8(0),
            Some(r) => {
                w.u8(1);
                w.bytes_var(&r.cprime);
                w.u32(r.trace.layers.len() as u32);
                for l in &r.trace.layers {
                    w.bytes_fixed(l);
                }
            }
        }
        w.u32(self.entries.len() as u32);
        for (dir, frame) in &self.entries {
            w.u8(match dir {
                Direction::Sent => 0x01,
                Direction::Received => 0x02,
            });
            w.bytes_var(frame);
        }
        w.bytes_fixed(&self.head);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader::new(bytes);
        let member = r.u32()?;
        let reveal = match r.u8()? {
            0 => None,
            1 => {
                let cprime = r.bytes_var()?.to_vec();
                let n = r.u32()? as usize;
                if n > onion::MAX_LAYERS {
                    return None;
                }
                let mut layers = Vec::with_capacity(n);
                for _ in 0..n {
                    layers.push(r.bytes_fixed::<KEY_LEN>()?);
                }
                Some(Reveal { cprime, trace: RandomnessTrace { layers } })
            }
            _ => return None,
        };
        let count = r.u32()? as usize;
        if count > 1 << 16 {
            return None;
        }
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let dir = Direction::from_byte(r.u8()?)?;
            entries.push((dir, r.bytes_var()?.to_vec()));
        }
        let head = r.bytes_fixed::<32>()?;
        if !r.is_empty() {
            return None;
        }
        Some(EvidenceBundle { member, reveal, entries, head })
    }
}

/// The provable fault classes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum FaultCategory {
    BadKey,
    BadSubmission,
    BadShuffleStep,
    FalseNoGo,
    WrongHash,
    BadSecondaryKey,
    Equivocation,
    /// Bulk protocol: a verified accusation of slot corruption.
    CorruptSlot,
}

impl FaultCategory {
    pub fn name(self) -> &'static str {
        match self {
            FaultCategory::BadKey => "bad_key",
            FaultCategory::BadSubmission => "bad_submission",
            FaultCategory::BadShuffleStep => "bad_shuffle_step",
            FaultCategory::FalseNoGo => "false_nogo",
            FaultCategory::WrongHash => "wrong_hash",
            FaultCategory::BadSecondaryKey => "bad_secondary_key",
            FaultCategory::Equivocation => "equivocation",
            FaultCategory::CorruptSlot => "corrupt_slot",
        }
    }
}

/// The minimal message set demonstrating one member's fault.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proof {
    pub category: FaultCategory,
    /// Signed frames (wire bytes) that demonstrate the fault.
    pub frames: Vec<Vec<u8>>,
    pub note: String,
}

/// Deterministic outcome of blame verification.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BlameVerdict {
    pub proofs: BTreeMap<MemberId, Vec<Proof>>,
}

impl BlameVerdict {
    pub fn exposed(&self) -> BTreeSet<MemberId> {
        self.proofs.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.proofs.is_empty()
    }

    pub fn categories(&self, member: MemberId) -> Vec<FaultCategory> {
        self.proofs
            .get(&member)
            .map(|ps| ps.iter().map(|p| p.category).collect())
            .unwrap_or_default()
    }

    fn expose(&mut self, member: MemberId, category: FaultCategory, frames: Vec<Vec<u8>>, note: String) {
        self.proofs
            .entry(member)
            .or_default()
            .push(Proof { category, frames, note });
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlameError {
    #[error("evidence incomplete; missing transcripts or reveals from {0:?}")]
    IncompleteEvidence(Vec<MemberId>),
}

/// All signed frames recoverable from the evidence, deduplicated and
/// indexed by (sender, phase, subphase, message kind).
struct FrameUniverse {
    by_key: BTreeMap<(MemberId, u8, u8, u8), Vec<Frame>>,
}

impl FrameUniverse {
    fn collect(cfg: &RoundConfig, evidence: &BTreeMap<MemberId, EvidenceBundle>) -> Self {
        let mut by_key: BTreeMap<(MemberId, u8, u8, u8), Vec<Frame>> = BTreeMap::new();
        let mut add = |frame_bytes: &[u8]| {
            let Ok(frame) = Frame::decode(frame_bytes) else {
                return;
            };
            if frame.nonce != cfg.nonce {
                return;
            }
            let Some(p) = cfg.participant(frame.sender) else {
                return;
            };
            if !frame.verify(&p.sig) {
                return;
            }
            let kind = *frame.payload.first().unwrap_or(&0);
            let slot = by_key
                .entry((frame.sender, frame.phase, frame.subphase, kind))
                .or_default();
            if !slot.contains(&frame) {
                slot.push(frame);
            }
        };
        for bundle in evidence.values() {
            for (_, frame_bytes) in &bundle.entries {
                add(frame_bytes);
                // Leader key bundles carry the phase-1 frames verbatim.
                if let Ok(f) = Frame::decode(frame_bytes) {
                    if let Ok(Msg::KeyBundle { frames }) = f.msg() {
                        for inner in &frames {
                            add(inner);
                        }
                    }
                }
            }
        }
        Self { by_key }
    }

    fn get(&self, sender: MemberId, phase: u8, subphase: u8, kind: u8) -> &[Frame] {
        self.by_key
            .get(&(sender, phase, subphase, kind))
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// The unique frame for a key, if the sender did not equivocate.
    fn unique(&self, sender: MemberId, phase: u8, subphase: u8, kind: u8) -> Option<&Frame> {
        match self.get(sender, phase, subphase, kind) {
            [f] => Some(f),
            _ => None,
        }
    }
}

fn multiset(items: &[Vec<u8>]) -> BTreeMap<&[u8], usize> {
    let mut m = BTreeMap::new();
    for i in items {
        *m.entry(i.as_slice()).or_insert(0) += 1;
    }
    m
}

const KIND_SECONDARY_KEY: u8 = 0x01;
const KIND_KEY_BUNDLE: u8 = 0x02;
const KIND_SUBMISSION: u8 = 0x03;
const KIND_VECTOR: u8 = 0x04;
const KIND_GONOGO: u8 = 0x06;
const KIND_SECONDARY_PRIVATE: u8 = 0x07;

/// Run the full case analysis over gathered evidence.
///
/// Returns a verdict whenever the evidence suffices to decide one (an empty
/// verdict means no provable fault: spurious blame). Returns
/// `IncompleteEvidence` when transcripts or reveals needed for replay are
/// missing and no direct fault was provable without them.
pub fn verify_blame(
    cfg: &RoundConfig,
    evidence: &BTreeMap<MemberId, EvidenceBundle>,
) -> Result<BlameVerdict, BlameError> {
    let n = cfg.n();
    let mut verdict = BlameVerdict::default();
    let universe = FrameUniverse::collect(cfg, evidence);

    // Equivocation: more than one distinct signed message per
    // (phase, subphase, kind).
    for (key, frames) in &universe.by_key {
        if frames.len() > 1 {
            verdict.expose(
                key.0,
                FaultCategory::Equivocation,
                frames.iter().map(|f| f.encode()).collect(),
                format!("{} distinct signed messages in phase {}", frames.len(), key.1),
            );
        }
    }

    // Phase 1: secondary keys must parse. The z keys feed the stack replay
    // below but their wire validity is a fault class of its own. Any signed
    // phase-1 message other than a well-formed key (or the leader's bundle)
    // exposes its signer.
    for (key, frames) in &universe.by_key {
        let (sender, phase, _, kind) = *key;
        if phase != PHASE_KEY || kind == KIND_KEY_BUNDLE {
            continue;
        }
        for f in frames {
            if !matching_secondary_key(f) {
                verdict.expose(
                    sender,
                    FaultCategory::BadKey,
                    vec![f.encode()],
                    "signed an invalid secondary public key".into(),
                );
            }
        }
    }
    // A leader bundle that is not the roster's N valid key frames in order
    // exposes the leader.
    for f in universe.get(cfg.leader(), PHASE_KEY, 0, KIND_KEY_BUNDLE) {
        if !valid_bundle(cfg, f) {
            verdict.expose(
                cfg.leader(),
                FaultCategory::BadShuffleStep,
                vec![f.encode()],
                "signed a malformed phase-1 key bundle".into(),
            );
        }
    }

    // Phase 5a: released private keys must match the published public keys.
    let zkeys = collect_zkeys(cfg, &universe);
    for p in &cfg.participants {
        for f in universe.get(p.id, crate::wire::PHASE_FINAL, crate::wire::SUB_DECRYPT, KIND_SECONDARY_PRIVATE)
        {
            let (Ok(Msg::SecondaryPrivate { w }), Some(z)) = (f.msg(), zkeys.get(&p.id)) else {
                continue;
            };
            if !matches(&w, z) {
                let mut frames = vec![f.encode()];
                if let Some(zf) = universe.unique(p.id, PHASE_KEY, 0, KIND_SECONDARY_KEY) {
                    frames.push(zf.encode());
                }
                verdict.expose(
                    p.id,
                    FaultCategory::BadSecondaryKey,
                    frames,
                    "released secondary private key does not match public key".into(),
                );
            }
        }
    }

    // Submission replay: rebuild every member's layer stack from its reveal.
    let enc_keys = cfg.enc_keys();
    let core_len = (cfg.datum_len as usize) + onion::FRAME_OVERHEAD;
    let mut stacks: BTreeMap<MemberId, Vec<Vec<u8>>> = BTreeMap::new();
    let mut missing: Vec<MemberId> = Vec::new();
    for p in &cfg.participants {
        let Some(bundle) = evidence.get(&p.id) else {
            missing.push(p.id);
            continue;
        };
        let Some(reveal) = &bundle.reveal else {
            missing.push(p.id);
            continue;
        };
        let Some(sub) = universe.unique(p.id, PHASE_SUBMIT, 0, KIND_SUBMISSION) else {
            missing.push(p.id);
            continue;
        };
        let Ok(Msg::Submission { onion: submitted }) = sub.msg() else {
            missing.push(p.id);
            continue;
        };
        let replayed = (reveal.cprime.len() == core_len)
            .then(|| onion::stack_with(&enc_keys, &reveal.cprime, &reveal.trace).ok())
            .flatten();
        match replayed {
            Some(stack) if stack[0] == submitted => {
                stacks.insert(p.id, stack);
            }
            _ => {
                verdict.expose(
                    p.id,
                    FaultCategory::BadSubmission,
                    vec![sub.encode()],
                    "replayed onion does not reproduce the signed submission".into(),
                );
            }
        }
    }

    if stacks.len() == n {
        // Colluding submissions that decrypt to identical intermediates.
        let ids: Vec<MemberId> = cfg.member_ids().collect();
        for (a_idx, &a) in ids.iter().enumerate() {
            for &b in &ids[a_idx + 1..] {
                let (sa, sb) = (&stacks[&a], &stacks[&b]);
                if let Some(level) = (0..=n).find(|&k| sa[k] == sb[k]) {
                    for &m in &[a, b] {
                        verdict.expose(
                            m,
                            FaultCategory::BadSubmission,
                            Vec::new(),
                            format!("submissions collide at decryption level {level}"),
                        );
                    }
                }
            }
        }

        walk_anonymization(cfg, &universe, &stacks, &mut verdict);
    }

    if !verdict.is_empty() {
        return Ok(verdict);
    }
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        return Err(BlameError::IncompleteEvidence(missing));
    }
    // Transcript chains are only inspected once nothing else is provable: a
    // member whose exported log does not replay to its claimed head has
    // tampered with its own export.
    for p in &cfg.participants {
        if let Some(bundle) = evidence.get(&p.id) {
            let entries: Vec<LogEntry> = bundle
                .entries
                .iter()
                .map(|(dir, msg)| LogEntry {
                    direction: *dir,
                    phase: Frame::decode(msg).map(|f| f.phase).unwrap_or(0),
                    message: msg.clone(),
                })
                .collect();
            if !verify_transcript(&cfg.nonce, &entries, &bundle.head) {
                return Err(BlameError::IncompleteEvidence(vec![p.id]));
            }
        }
    }
    Ok(verdict)
}

fn matching_secondary_key(f: &Frame) -> bool {
    matches!(f.msg(), Ok(Msg::SecondaryKey { .. }))
}

/// The bundle must carry exactly one valid signed key frame per roster
/// position, in roster order.
fn valid_bundle(cfg: &RoundConfig, f: &Frame) -> bool {
    let Ok(Msg::KeyBundle { frames }) = f.msg() else {
        return false;
    };
    if frames.len() != cfg.n() {
        return false;
    }
    frames.iter().zip(&cfg.participants).all(|(bytes, p)| {
        Frame::decode(bytes).is_ok_and(|inner| {
            inner.nonce == cfg.nonce
                && inner.sender == p.id
                && inner.phase == PHASE_KEY
                && inner.verify(&p.sig)
                && matching_secondary_key(&inner)
        })
    })
}

fn collect_zkeys(
    cfg: &RoundConfig,
    universe: &FrameUniverse,
) -> BTreeMap<MemberId, crate::crypto::EncPublicKey> {
    let mut out = BTreeMap::new();
    for p in &cfg.participants {
        if let Some(f) = universe.unique(p.id, PHASE_KEY, 0, KIND_SECONDARY_KEY) {
            if let Ok(Msg::SecondaryKey { z }) = f.msg() {
                out.insert(p.id, crate::crypto::EncPublicKey(z));
            }
        }
    }
    out
}

/// Check every anonymization step against the replayed stacks, then the
/// go/no-go votes against the final vector.
fn walk_anonymization(
    cfg: &RoundConfig,
    universe: &FrameUniverse,
    stacks: &BTreeMap<MemberId, Vec<Vec<u8>>>,
    verdict: &mut BlameVerdict,
) {
    let n = cfg.n();
    let mut clean = true;
    let mut final_items: Option<Vec<Vec<u8>>> = None;

    for k in 0..n {
        let shuffler = cfg.at(k).id;
        let Some(frame) = universe.unique(shuffler, PHASE_SHUFFLE, 0, KIND_VECTOR) else {
            // Either the run stopped before this step, or the shuffler
            // equivocated (already exposed above).
            clean = false;
            break;
        };
        let Ok(Msg::Vector { items }) = frame.msg() else {
            verdict.expose(
                shuffler,
                FaultCategory::BadShuffleStep,
                vec![frame.encode()],
                "anonymization output is not a ciphertext vector".into(),
            );
            clean = false;
            break;
        };
        let expected: Vec<Vec<u8>> = stacks.values().map(|s| s[k + 1].clone()).collect();
        if multiset(&items) != multiset(&expected) {
            verdict.expose(
                shuffler,
                FaultCategory::BadShuffleStep,
                vec![frame.encode()],
                format!("output of step {} is not the peeled permutation of its input", k + 1),
            );
            clean = false;
            break;
        }
        if k == n - 1 {
            final_items = Some(items);
        }
    }

    let (true, Some(final_items)) = (clean, final_items) else {
        return;
    };
    let digest = vector_digest(&final_items);
    for p in &cfg.participants {
        let Some(frame) = universe.unique(p.id, PHASE_VERIFY, 0, KIND_GONOGO) else {
            continue;
        };
        let Ok(Msg::GoNoGo { flag, digest: cited }) = frame.msg() else {
            continue;
        };
        if !flag && final_items.contains(&stacks[&p.id][n]) {
            verdict.expose(
                p.id,
                FaultCategory::FalseNoGo,
                vec![frame.encode()],
                "voted no-go although its intermediate ciphertext is present".into(),
            );
        }
        if cited != digest {
            verdict.expose(
                p.id,
                FaultCategory::WrongHash,
                vec![frame.encode()],
                "cited a digest that does not match the broadcast final vector".into(),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evidence_bundle_roundtrip() {
        let bundle = EvidenceBundle {
            member: 3,
            reveal: Some(Reveal {
                cprime: vec![1, 2, 3],
                trace: RandomnessTrace { layers: vec![[7u8; 32], [8u8; 32]] },
            }),
            entries: vec![
                (Direction::Sent, vec![9; 10]),
                (Direction::Received, vec![4; 5]),
            ],
            head: [2u8; 32],
        };
        assert_eq!(EvidenceBundle::decode(&bundle.encode()).unwrap(), bundle);

        let no_reveal = EvidenceBundle { reveal: None, ..bundle };
        assert_eq!(EvidenceBundle::decode(&no_reveal.encode()).unwrap(), no_reveal);
    }
}
