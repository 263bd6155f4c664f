//! The shuffle protocol: per-member state machine and blame verdict logic.
//!
//! Each member submits a fixed-length datum under two nested onions: an
//! inner one over everyone's fresh *secondary* keys and an outer one over
//! everyone's long-term *primary* keys, recording the outer layer
//! randomness for later replay. Members then take turns peeling one outer
//! layer off the whole batch and permuting it, the last member broadcasts
//! the result, and everyone votes go/no-go on whether their own
//! intermediate ciphertext survived. Only a unanimous go releases the
//! secondary private keys that decrypt the batch; anything else ends in the
//! blame phase, where transcripts and recorded randomness are exchanged and
//! [`blame::verify_blame`] turns them into a verdict.
//!
//! Message flow per run (the leader is the first roster member):
//!
//! * phase 1: everyone sends its secondary public key to the leader, which
//!   rebroadcasts the signed frames as one bundle (2 rounds);
//! * phase 2: everyone sends its submission to the first member (1 round);
//! * phase 3: the batch crosses members 1..N serially, then member N sends
//!   the final vector to everyone (N rounds);
//! * phase 4: go/no-go votes go directly member-to-member (1 round);
//! * phase 5a: secondary private keys likewise (1 round).
//!
//! An honest run therefore completes in exactly N + 5 serial rounds.

pub mod blame;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::crypto::{
    keygen_encryption, matches, Digest, EncPublicKey, EncryptionKeyPair, KeyRole, SigningKeyPair,
};
use crate::faults::{Behavior, FaultAction};
use crate::logchain::{Direction, LogEntry, TamperLog};
use crate::onion::{self, RandomnessTrace};
use crate::types::{ConfigError, MemberId, RoundConfig};
use crate::wire::{
    vector_digest, FaultReason, Frame, Msg, PHASE_FINAL, PHASE_KEY, PHASE_SHUFFLE, PHASE_SUBMIT,
    PHASE_VERIFY, SUB_BLAME, SUB_DECRYPT, SUB_NONE,
};

pub use blame::{BlameError, BlameVerdict, EvidenceBundle, FaultCategory, Proof, Reveal};

/// A frame in flight plus its causal round (1 + the highest round the
/// sender had observed when it emitted the frame). Transport metadata, not
/// part of the signed frame.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Envelope {
    pub frame: Vec<u8>,
    pub depth: u32,
}

/// One logical emission. A broadcast lists every recipient but its payload
/// is produced (and counted) once.
#[derive(Clone, Debug)]
pub struct Output {
    pub to: Vec<MemberId>,
    pub env: Envelope,
}

/// Terminal state of one member's view of a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ShuffleResult {
    /// The permuted data, one entry per slot. Slots whose inner onion was
    /// not decryptable (a submitter corrupting no one but itself) carry an
    /// empty datum and are listed in `invalid_slots`.
    Completed { data: Vec<Vec<u8>>, invalid_slots: Vec<usize> },
    Blamed(BlameVerdict),
    /// The run cannot conclude without members whose cooperation is
    /// missing; the wrapper's suspicion machinery takes over.
    Aborted { excluded: Vec<MemberId> },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Stage {
    Keys,
    Chain,
    Verify,
    Decrypt,
    Blame,
    Done,
}

/// Copies of secrets the protocol destroys, retained only when a simulator
/// oracle asks for them; the member's own working copies are still wiped at
/// the points the protocol requires.
#[derive(Clone, Debug, Default)]
pub struct OracleTap {
    pub cprime: Option<Vec<u8>>,
    pub trace: Option<RandomnessTrace>,
    pub submission: Option<Vec<u8>>,
    pub permutation: Option<Vec<usize>>,
    pub secondary_secret: Option<[u8; 32]>,
}

mod kinds {
    pub const SECONDARY_KEY: u8 = 0x01;
    pub const KEY_BUNDLE: u8 = 0x02;
    pub const SUBMISSION: u8 = 0x03;
    pub const VECTOR: u8 = 0x04;
    pub const FAULT_REPORT: u8 = 0x05;
    pub const GONOGO: u8 = 0x06;
    pub const SECONDARY_PRIVATE: u8 = 0x07;
    pub const EVIDENCE: u8 = 0x08;
}

/// Deterministic single-member state machine. Consumes verified envelopes
/// in any arrival order (batches are processed in roster order once
/// complete), emits signed frames, and settles on a [`ShuffleResult`].
pub struct ShuffleMember {
    cfg: RoundConfig,
    me: MemberId,
    pos: usize,
    sign: SigningKeyPair,
    enc: EncryptionKeyPair,
    datum: Vec<u8>,
    rng: ChaCha20Rng,
    behavior: Behavior,
    log: TamperLog,
    depth: u32,
    stage: Stage,
    silenced: bool,
    staged: BTreeMap<(u8, u8, u8, MemberId), Frame>,
    secondary: Option<EncryptionKeyPair>,
    zkeys: Option<Vec<EncPublicKey>>,
    cprime: Option<Vec<u8>>,
    cprime_framed: Option<Vec<u8>>,
    trace: Option<RandomnessTrace>,
    my_step_done: bool,
    final_items: Option<Vec<Vec<u8>>>,
    my_digest: Option<Digest>,
    result: Option<ShuffleResult>,
    dropped_frames: u64,
    oracle: Option<OracleTap>,
}

impl ShuffleMember {
    pub fn new(
        cfg: RoundConfig,
        me: MemberId,
        sign: SigningKeyPair,
        enc: EncryptionKeyPair,
        datum: Vec<u8>,
        rng_seed: [u8; 32],
        behavior: Behavior,
    ) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let pos = cfg.position(me).ok_or(ConfigError::Malformed)?;
        assert_eq!(
            datum.len() as u64,
            cfg.datum_len,
            "datum must have the configured fixed length"
        );
        let log = TamperLog::new(&cfg.nonce);
        Ok(Self {
            cfg,
            me,
            pos,
            sign,
            enc,
            datum,
            rng: crate::crypto::member_rng(&rng_seed),
            behavior,
            log,
            depth: 0,
            stage: Stage::Keys,
            silenced: false,
            staged: BTreeMap::new(),
            secondary: None,
            zkeys: None,
            cprime: None,
            cprime_framed: None,
            trace: None,
            my_step_done: false,
            final_items: None,
            my_digest: None,
            result: None,
            dropped_frames: 0,
            oracle: None,
        })
    }

    pub fn enable_oracle(&mut self) {
        self.oracle = Some(OracleTap::default());
    }

    pub fn oracle(&self) -> Option<&OracleTap> {
        self.oracle.as_ref()
    }

    pub fn me(&self) -> MemberId {
        self.me
    }

    pub fn config(&self) -> &RoundConfig {
        &self.cfg
    }

    pub fn result(&self) -> Option<&ShuffleResult> {
        self.result.as_ref()
    }

    pub fn done(&self) -> bool {
        self.result.is_some()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dropped_frames(&self) -> u64 {
        self.dropped_frames
    }

    fn n(&self) -> usize {
        self.cfg.n()
    }

    fn leader(&self) -> MemberId {
        self.cfg.leader()
    }

    fn is_leader(&self) -> bool {
        self.me == self.leader()
    }

    fn others(&self) -> Vec<MemberId> {
        self.cfg.member_ids().filter(|&id| id != self.me).collect()
    }

    /// Inner-onion frame length: the outer onion's core.
    fn inner_len(&self) -> usize {
        self.cfg.datum_len as usize + onion::FRAME_OVERHEAD
    }

    /// Item length of every phase-3 vector.
    fn item_len(&self) -> usize {
        self.inner_len() + onion::FRAME_OVERHEAD
    }

    // -- emission helpers ---------------------------------------------------

    fn build_frame(&mut self, phase: u8, subphase: u8, msg: &Msg) -> Frame {
        Frame::build(
            self.cfg.nonce,
            phase,
            subphase,
            self.me,
            self.log.head(),
            msg.encode(),
            &self.sign,
        )
    }

    fn log_sent(&mut self, phase: u8, frame: &Frame) {
        self.log
            .append(LogEntry {
                direction: Direction::Sent,
                phase,
                message: frame.encode(),
            })
            .expect("sent phases are nondecreasing");
    }

    /// Build, sign, log and address one message. Respects a silenced
    /// member's refusal to transmit.
    fn emit(&mut self, phase: u8, subphase: u8, msg: Msg, to: Vec<MemberId>) -> Vec<Output> {
        if let Some(p) = self.behavior.silent_from() {
            if phase >= p && phase != crate::wire::PHASE_CONTROL {
                self.silenced = true;
            }
        }
        let frame = self.build_frame(phase, subphase, &msg);
        self.log_sent(phase, &frame);
        self.depth += 1;
        if self.silenced {
            return Vec::new();
        }
        vec![Output {
            to,
            env: Envelope { frame: frame.encode(), depth: self.depth },
        }]
    }

    // -- lifecycle ----------------------------------------------------------

    /// Phase 1: generate the secondary pair and publish its public key.
    pub fn start(&mut self) -> Vec<Output> {
        assert_eq!(self.stage, Stage::Keys, "start is called once");
        let pair = keygen_encryption(&mut self.rng, KeyRole::Secondary);
        let z = pair.public().0;
        if let Some(tap) = self.oracle.as_mut() {
            tap.secondary_secret = Some(pair.secret_bytes());
        }
        self.secondary = Some(pair);
        let mut out = self.emit(PHASE_KEY, SUB_NONE, Msg::SecondaryKey { z }, vec![self.leader()]);
        // The leader's own key frame never travels alone; it rides in the
        // bundle. Stage it directly.
        if self.is_leader() {
            out.clear();
            let frame = Frame::decode(
                &self
                    .log
                    .entries()
                    .last()
                    .expect("own key frame was just logged")
                    .message,
            )
            .unwrap();
            self.staged
                .insert((PHASE_KEY, SUB_NONE, kinds::SECONDARY_KEY, self.me), frame);
            out.extend(self.pump());
        }
        out
    }

    /// Feed one delivered envelope. Invalid frames (bad signature, foreign
    /// nonce, unknown sender) are dropped silently.
    pub fn on_envelope(&mut self, env: &Envelope) -> Vec<Output> {
        if self.silenced || self.done() {
            return Vec::new();
        }
        let Ok(frame) = Frame::decode(&env.frame) else {
            self.dropped_frames += 1;
            return Vec::new();
        };
        if frame.nonce != self.cfg.nonce {
            self.dropped_frames += 1;
            return Vec::new();
        }
        let Some(p) = self.cfg.participant(frame.sender) else {
            self.dropped_frames += 1;
            return Vec::new();
        };
        if !frame.verify(&p.sig) {
            self.dropped_frames += 1;
            return Vec::new();
        }
        self.depth = self.depth.max(env.depth);
        let kind = *frame.payload.first().unwrap_or(&0);
        let key = (frame.phase, frame.subphase, kind, frame.sender);
        if let Some(existing) = self.staged.get(&key) {
            if existing.encode() != env.frame {
                // A conflicting signed message: log it so the equivocation
                // lands in exported evidence, but keep the first for
                // protocol progress.
                let phase = frame.phase;
                let _ = self.log.append(LogEntry {
                    direction: Direction::Received,
                    phase,
                    message: env.frame.clone(),
                });
            }
            return Vec::new();
        }
        self.staged.insert(key, frame.clone());

        // Fault reports and evidence divert any stage into blame.
        let mut out = Vec::new();
        if matches!(kind, kinds::FAULT_REPORT | kinds::EVIDENCE)
            && !matches!(self.stage, Stage::Blame | Stage::Done)
        {
            self.log_received(&[frame]);
            out.extend(self.enter_blame());
        }
        out.extend(self.pump());
        out
    }

    /// The leader's abort decision (wrapper-level control).
    pub fn on_abort(&mut self, excluded: &[MemberId]) {
        if !self.done() {
            self.result = Some(ShuffleResult::Aborted { excluded: excluded.to_vec() });
            self.stage = Stage::Done;
        }
    }

    /// Messages this member is blocked waiting for: (sender, phase,
    /// subphase). Drives the wrapper's suspicion mechanism.
    pub fn awaiting(&self) -> Vec<(MemberId, u8, u8)> {
        let missing = |phase: u8, sub: u8, kind: u8, from: Box<dyn Iterator<Item = MemberId> + '_>| {
            from.filter(|&id| !self.staged.contains_key(&(phase, sub, kind, id)))
                .map(|id| (id, phase, sub))
                .collect::<Vec<_>>()
        };
        match self.stage {
            Stage::Keys => {
                if self.is_leader() {
                    missing(
                        PHASE_KEY,
                        SUB_NONE,
                        kinds::SECONDARY_KEY,
                        Box::new(self.cfg.member_ids()),
                    )
                } else {
                    missing(
                        PHASE_KEY,
                        SUB_NONE,
                        kinds::KEY_BUNDLE,
                        Box::new(std::iter::once(self.leader())),
                    )
                }
            }
            Stage::Chain => {
                if !self.my_step_done {
                    if self.pos == 0 {
                        missing(
                            PHASE_SUBMIT,
                            SUB_NONE,
                            kinds::SUBMISSION,
                            Box::new(self.cfg.member_ids()),
                        )
                    } else {
                        missing(
                            PHASE_SHUFFLE,
                            SUB_NONE,
                            kinds::VECTOR,
                            Box::new(std::iter::once(self.cfg.at(self.pos - 1).id)),
                        )
                    }
                } else {
                    missing(
                        PHASE_SHUFFLE,
                        SUB_NONE,
                        kinds::VECTOR,
                        Box::new(std::iter::once(self.cfg.at(self.n() - 1).id)),
                    )
                }
            }
            Stage::Verify => missing(
                PHASE_VERIFY,
                SUB_NONE,
                kinds::GONOGO,
                Box::new(self.cfg.member_ids()),
            ),
            Stage::Decrypt => missing(
                PHASE_FINAL,
                SUB_DECRYPT,
                kinds::SECONDARY_PRIVATE,
                Box::new(self.cfg.member_ids()),
            ),
            Stage::Blame => missing(
                PHASE_FINAL,
                SUB_BLAME,
                kinds::EVIDENCE,
                Box::new(self.cfg.member_ids()),
            ),
            Stage::Done => Vec::new(),
        }
    }

    /// Produce a signed copy of an already-sent frame, for answering a
    /// suspicion demand. Silenced members stay silent.
    pub fn resend(&self, phase: u8, subphase: u8) -> Option<Vec<u8>> {
        if self.silenced {
            return None;
        }
        self.log
            .entries()
            .iter()
            .rev()
            .filter(|e| e.direction == Direction::Sent)
            .map(|e| Frame::decode(&e.message).expect("own log holds valid frames"))
            .find(|f| f.phase == phase && f.subphase == subphase)
            .map(|f| f.encode())
    }

    // -- staging helpers ----------------------------------------------------

    fn batch(&self, phase: u8, sub: u8, kind: u8) -> Option<Vec<Frame>> {
        let frames: Vec<Frame> = self
            .cfg
            .member_ids()
            .filter_map(|id| self.staged.get(&(phase, sub, kind, id)).cloned())
            .collect();
        (frames.len() == self.n()).then_some(frames)
    }

    fn take_one(&self, phase: u8, sub: u8, kind: u8, from: MemberId) -> Option<Frame> {
        self.staged.get(&(phase, sub, kind, from)).cloned()
    }

    /// Log a consumed batch of received frames in roster order; own frames
    /// were already logged at emission.
    fn log_received(&mut self, frames: &[Frame]) {
        for f in frames {
            if f.sender == self.me {
                continue;
            }
            let entry = LogEntry {
                direction: Direction::Received,
                phase: f.phase,
                message: f.encode(),
            };
            self.log.append(entry).expect("phases nondecreasing by stage order");
        }
    }

    // -- stage transitions --------------------------------------------------

    fn pump(&mut self) -> Vec<Output> {
        let mut out = Vec::new();
        loop {
            let step = match self.stage {
                Stage::Keys => self.pump_keys(),
                Stage::Chain => self.pump_chain(),
                Stage::Verify => self.pump_verify(),
                Stage::Decrypt => self.pump_decrypt(),
                Stage::Blame => self.pump_blame(),
                Stage::Done => None,
            };
            match step {
                Some(o) => out.extend(o),
                None => break,
            }
        }
        out
    }

    fn pump_keys(&mut self) -> Option<Vec<Output>> {
        if self.is_leader() {
            let frames = self.batch(PHASE_KEY, SUB_NONE, kinds::SECONDARY_KEY)?;
            self.log_received(&frames);
            let bundle: Vec<Vec<u8>> = frames.iter().map(|f| f.encode()).collect();
            let mut out = self.emit(
                PHASE_KEY,
                SUB_NONE,
                Msg::KeyBundle { frames: bundle.clone() },
                self.others(),
            );
            match self.accept_bundle(&bundle) {
                Ok(more) => out.extend(more),
                Err(fault) => out.extend(fault),
            }
            Some(out)
        } else {
            let frame = self.take_one(PHASE_KEY, SUB_NONE, kinds::KEY_BUNDLE, self.leader())?;
            self.log_received(std::slice::from_ref(&frame));
            let Ok(Msg::KeyBundle { frames }) = frame.msg() else {
                return Some(self.detect_fault(FaultReason::MalformedStep, b"bundle".to_vec()));
            };
            match self.accept_bundle(&frames) {
                Ok(out) => Some(out),
                Err(fault) => Some(fault),
            }
        }
    }

    /// Validate the phase-1 bundle and, if sound, build and submit the
    /// double onion. An invalid secondary key routes straight to blame.
    fn accept_bundle(&mut self, bundle: &[Vec<u8>]) -> Result<Vec<Output>, Vec<Output>> {
        if bundle.len() != self.n() {
            return Err(self.detect_fault(FaultReason::MalformedStep, b"bundle size".to_vec()));
        }
        let mut zkeys = Vec::with_capacity(self.n());
        for (k, bytes) in bundle.iter().enumerate() {
            let expect = self.cfg.at(k);
            let frame_ok = Frame::decode(bytes).ok().filter(|f| {
                f.nonce == self.cfg.nonce
                    && f.sender == expect.id
                    && f.phase == PHASE_KEY
                    && f.verify(&expect.sig)
            });
            let Some(inner) = frame_ok else {
                return Err(self.detect_fault(FaultReason::MalformedStep, b"bundle entry".to_vec()));
            };
            match inner.msg() {
                Ok(Msg::SecondaryKey { z }) => zkeys.push(EncPublicKey(z)),
                // A signed but unparseable key: the signer is at fault.
                _ => {
                    return Err(
                        self.detect_fault(FaultReason::InvalidCiphertext, inner.encode())
                    )
                }
            }
        }

        let (cprime, _inner_trace) = onion::seal(&zkeys, &self.datum.clone(), &mut self.rng)
            .expect("inner onion parameters are validated by the config");
        let (submission, trace) = onion::seal(&self.cfg.enc_keys(), &cprime, &mut self.rng)
            .expect("outer onion parameters are validated by the config");
        if let Some(tap) = self.oracle.as_mut() {
            tap.cprime = Some(cprime.clone());
            tap.trace = Some(trace.clone());
            tap.submission = Some(submission.clone());
        }
        self.zkeys = Some(zkeys);
        self.cprime_framed = Some(onion::frame_core(&cprime));
        self.cprime = Some(cprime);
        self.trace = Some(trace);
        self.stage = Stage::Chain;

        let first = self.cfg.at(0).id;
        let msg = Msg::Submission { onion: submission };
        if self.pos == 0 {
            let frame = self.build_frame(PHASE_SUBMIT, SUB_NONE, &msg);
            self.log_sent(PHASE_SUBMIT, &frame);
            self.depth += 1;
            self.staged
                .insert((PHASE_SUBMIT, SUB_NONE, kinds::SUBMISSION, self.me), frame);
            Ok(Vec::new())
        } else {
            Ok(self.emit(PHASE_SUBMIT, SUB_NONE, msg, vec![first]))
        }
    }

    fn pump_chain(&mut self) -> Option<Vec<Output>> {
        if !self.my_step_done {
            let items = if self.pos == 0 {
                let frames = self.batch(PHASE_SUBMIT, SUB_NONE, kinds::SUBMISSION)?;
                self.log_received(&frames);
                let mut items = Vec::with_capacity(self.n());
                for f in &frames {
                    match f.msg() {
                        Ok(Msg::Submission { onion }) => items.push(onion),
                        _ => {
                            return Some(
                                self.detect_fault(FaultReason::MalformedStep, f.encode()),
                            )
                        }
                    }
                }
                items
            } else {
                let from = self.cfg.at(self.pos - 1).id;
                let frame = self.take_one(PHASE_SHUFFLE, SUB_NONE, kinds::VECTOR, from)?;
                self.log_received(std::slice::from_ref(&frame));
                match frame.msg() {
                    Ok(Msg::Vector { items }) => items,
                    _ => {
                        return Some(self.detect_fault(FaultReason::MalformedStep, frame.encode()))
                    }
                }
            };
            return Some(self.anonymization_step(items));
        }

        // Awaiting the final broadcast (the last member handled its own
        // vector inline).
        let last = self.cfg.at(self.n() - 1).id;
        let frame = self.take_one(PHASE_SHUFFLE, SUB_NONE, kinds::VECTOR, last)?;
        if self.final_items.is_some() {
            return None;
        }
        self.log_received(std::slice::from_ref(&frame));
        let Ok(Msg::Vector { items }) = frame.msg() else {
            return Some(self.detect_fault(FaultReason::MalformedStep, frame.encode()));
        };
        Some(self.verify_final(items))
    }

    /// Phase 3 for this member: validate the incoming batch, permute it,
    /// strip one layer, pass it on (or broadcast it if last).
    fn anonymization_step(&mut self, items: Vec<Vec<u8>>) -> Vec<Output> {
        let n = self.n();
        if items.len() != n || items.iter().any(|i| i.len() != self.item_len()) {
            return self.detect_fault(FaultReason::MalformedStep, b"vector shape".to_vec());
        }
        if let Some(dup) = find_duplicate(&items) {
            return self.detect_fault(FaultReason::DuplicateCiphertext, items[dup].clone());
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let layers_remaining = n - self.pos;
        let mut peeled = Vec::with_capacity(n);
        for &idx in &order {
            match onion::peel(
                &self.enc.secret_bytes(),
                &items[idx],
                layers_remaining,
                self.inner_len(),
            ) {
                Ok(p) => peeled.push(p),
                Err(_) => {
                    return self
                        .detect_fault(FaultReason::InvalidCiphertext, items[idx].clone());
                }
            }
        }
        if let Some(tap) = self.oracle.as_mut() {
            tap.permutation = Some(order.clone());
        }

        self.apply_vector_fault(&mut peeled);
        self.my_step_done = true;

        if self.pos + 1 < n {
            let next = self.cfg.at(self.pos + 1).id;
            self.emit(PHASE_SHUFFLE, SUB_NONE, Msg::Vector { items: peeled }, vec![next])
        } else {
            let mut out = self.emit(
                PHASE_SHUFFLE,
                SUB_NONE,
                Msg::Vector { items: peeled.clone() },
                self.others(),
            );
            out.extend(self.verify_final(peeled));
            out
        }
    }

    fn apply_vector_fault(&mut self, items: &mut Vec<Vec<u8>>) {
        match self.behavior.strategy.map(|s| s.action) {
            Some(FaultAction::DuplicateEntry) if items.len() >= 2 => {
                items[1] = items[0].clone();
            }
            Some(FaultAction::ReplaceEntry) => {
                let mut junk = vec![0u8; items[0].len()];
                self.rng.fill_bytes(&mut junk);
                items[0] = junk;
            }
            Some(FaultAction::DropEntry) => {
                items.pop();
            }
            _ => {}
        }
    }

    /// Phase 4: check own ciphertext survived and vote.
    fn verify_final(&mut self, items: Vec<Vec<u8>>) -> Vec<Output> {
        let n = self.n();
        // Structural faults in the final vector are detectable by everyone.
        if items.len() != n || items.iter().any(|i| i.len() != self.item_len()) {
            return self.detect_fault(FaultReason::MalformedStep, b"final shape".to_vec());
        }
        if let Some(dup) = find_duplicate(&items) {
            return self.detect_fault(FaultReason::DuplicateCiphertext, items[dup].clone());
        }

        let mine = self.cprime_framed.as_ref().expect("set in phase 2");
        let mut flag = items.contains(mine);
        let mut digest = vector_digest(&items);
        self.final_items = Some(items);
        self.stage = Stage::Verify;

        let mut split = None;
        match self.behavior.strategy.map(|s| s.action) {
            Some(FaultAction::FalseFlag) => flag = false,
            Some(FaultAction::WrongDigest) => digest[0] ^= 0xff,
            Some(FaultAction::Equivocate) => split = Some(()),
            _ => {}
        }
        self.my_digest = Some(digest);

        if split.is_some() {
            // Sign two conflicting votes and partition the group between
            // them; own processing uses the first.
            let half: Vec<MemberId> = self.others().into_iter().take(n / 2).collect();
            let rest: Vec<MemberId> =
                self.others().into_iter().filter(|id| !half.contains(id)).collect();
            let mut out = self.emit(PHASE_VERIFY, SUB_NONE, Msg::GoNoGo { flag, digest }, rest);
            let own = self
                .log
                .entries()
                .last()
                .map(|e| Frame::decode(&e.message).unwrap())
                .unwrap();
            self.staged
                .insert((PHASE_VERIFY, SUB_NONE, kinds::GONOGO, self.me), own);
            out.extend(self.emit(
                PHASE_VERIFY,
                SUB_NONE,
                Msg::GoNoGo { flag: false, digest },
                half,
            ));
            return out;
        }

        let out = self.emit(PHASE_VERIFY, SUB_NONE, Msg::GoNoGo { flag, digest }, self.others());
        let own = self
            .log
            .entries()
            .iter()
            .rev()
            .find(|e| e.direction == Direction::Sent)
            .map(|e| Frame::decode(&e.message).unwrap())
            .unwrap();
        self.staged
            .insert((PHASE_VERIFY, SUB_NONE, kinds::GONOGO, self.me), own);
        out
    }

    fn pump_verify(&mut self) -> Option<Vec<Output>> {
        let frames = self.batch(PHASE_VERIFY, SUB_NONE, kinds::GONOGO)?;
        self.log_received(&frames);
        let my_digest = self.my_digest.expect("set when voting");
        let mut all_go = true;
        for f in &frames {
            match f.msg() {
                Ok(Msg::GoNoGo { flag, digest }) => {
                    if !flag || digest != my_digest {
                        all_go = false;
                    }
                }
                _ => all_go = false,
            }
        }
        if !all_go {
            return Some(self.enter_blame());
        }

        // Key release is gated on a unanimous, digest-consistent go. Destroy
        // the working copies before the key leaves.
        self.cprime = None;
        self.trace = None;
        self.stage = Stage::Decrypt;
        let honest_w = self.secondary.as_ref().expect("set at start").secret_bytes();
        let w = if self.behavior.acts(FaultAction::BadSecondaryKey) {
            let mut junk = [0u8; 32];
            self.rng.fill_bytes(&mut junk);
            junk
        } else {
            honest_w
        };
        let out = self.emit(
            PHASE_FINAL,
            SUB_DECRYPT,
            Msg::SecondaryPrivate { w },
            self.others(),
        );
        let own = self
            .log
            .entries()
            .iter()
            .rev()
            .find(|e| e.direction == Direction::Sent)
            .map(|e| Frame::decode(&e.message).unwrap())
            .unwrap();
        self.staged
            .insert((PHASE_FINAL, SUB_DECRYPT, kinds::SECONDARY_PRIVATE, self.me), own);
        Some(out)
    }

    fn pump_decrypt(&mut self) -> Option<Vec<Output>> {
        let frames = self.batch(PHASE_FINAL, SUB_DECRYPT, kinds::SECONDARY_PRIVATE)?;
        self.log_received(&frames);
        let zkeys = self.zkeys.clone().expect("set in phase 1");
        let mut wkeys = Vec::with_capacity(self.n());
        for (k, f) in frames.iter().enumerate() {
            match f.msg() {
                Ok(Msg::SecondaryPrivate { w }) if matches(&w, &zkeys[k]) => wkeys.push(w),
                // An unmatching key is immediate, directly provable fault.
                _ => return Some(self.enter_blame()),
            }
        }

        let n = self.n();
        let inner_len = self.inner_len();
        let datum_len = self.cfg.datum_len as usize;
        let mut data = Vec::with_capacity(n);
        let mut invalid_slots = Vec::new();
        let items = self.final_items.clone().expect("set in phase 4");
        for (slot, item) in items.iter().enumerate() {
            let datum = onion::open_core(item, inner_len).ok().and_then(|mut frame| {
                for (k, w) in wkeys.iter().enumerate() {
                    frame = onion::peel(w, &frame, n - k, datum_len).ok()?;
                }
                onion::open_core(&frame, datum_len).ok()
            });
            match datum {
                Some(d) => data.push(d),
                None => {
                    invalid_slots.push(slot);
                    data.push(Vec::new());
                }
            }
        }
        self.result = Some(ShuffleResult::Completed { data, invalid_slots });
        self.stage = Stage::Done;
        None
    }

    /// Broadcast a fault report and move to blame.
    fn detect_fault(&mut self, reason: FaultReason, detail: Vec<u8>) -> Vec<Output> {
        if matches!(self.stage, Stage::Blame | Stage::Done) {
            return Vec::new();
        }
        let mut out = self.emit(
            PHASE_SHUFFLE,
            SUB_NONE,
            Msg::FaultReport { reason, detail },
            self.others(),
        );
        out.extend(self.enter_blame());
        out
    }

    /// Destroy the secondary private key, export evidence, await everyone
    /// else's.
    fn enter_blame(&mut self) -> Vec<Output> {
        if matches!(self.stage, Stage::Blame | Stage::Done) {
            return Vec::new();
        }
        self.stage = Stage::Blame;
        self.secondary = None;

        let reveal = match (self.cprime.take(), self.trace.take()) {
            (Some(cprime), Some(trace)) => Some(Reveal { cprime, trace }),
            _ => None,
        };
        let bundle = EvidenceBundle {
            member: self.me,
            reveal,
            entries: self.log.export(),
            head: self.log.head(),
        };
        let out = self.emit(
            PHASE_FINAL,
            SUB_BLAME,
            Msg::Evidence { bundle: bundle.encode() },
            self.others(),
        );
        let own = self
            .log
            .entries()
            .iter()
            .rev()
            .find(|e| e.direction == Direction::Sent)
            .map(|e| Frame::decode(&e.message).unwrap())
            .unwrap();
        self.staged
            .insert((PHASE_FINAL, SUB_BLAME, kinds::EVIDENCE, self.me), own);
        out
    }

    fn pump_blame(&mut self) -> Option<Vec<Output>> {
        let frames = self.batch(PHASE_FINAL, SUB_BLAME, kinds::EVIDENCE)?;
        self.log_received(&frames);
        let mut evidence = BTreeMap::new();
        for f in &frames {
            if let Ok(Msg::Evidence { bundle }) = f.msg() {
                if let Some(b) = EvidenceBundle::decode(&bundle) {
                    if b.member == f.sender {
                        evidence.insert(b.member, b);
                    }
                }
            }
        }
        let result = match blame::verify_blame(&self.cfg, &evidence) {
            Ok(verdict) => ShuffleResult::Blamed(verdict),
            Err(BlameError::IncompleteEvidence(missing)) => {
                ShuffleResult::Aborted { excluded: missing }
            }
        };
        self.result = Some(result);
        self.stage = Stage::Done;
        None
    }
}

fn find_duplicate(items: &[Vec<u8>]) -> Option<usize> {
    for i in 0..items.len() {
        for j in (i + 1)..items.len() {
            if items[i] == items[j] {
                return Some(j);
            }
        }
    }
    None
}
