//! Transport-facing surface of a protocol state machine.
//!
//! Both the deterministic simulator and the TCP runtime drive members
//! through this trait: feed envelopes in, route the emitted outputs, and
//! consult `awaiting`/`resend` for the wrapper's suspicion mechanism.

use crate::shuffle::{Envelope, Output, ShuffleMember, ShuffleResult};
use crate::types::MemberId;

pub trait ProtocolNode {
    fn me(&self) -> MemberId;
    fn start(&mut self) -> Vec<Output>;
    fn on_envelope(&mut self, env: &Envelope) -> Vec<Output>;
    fn done(&self) -> bool;
    /// Messages this node is blocked on: (sender, phase, subphase).
    fn awaiting(&self) -> Vec<(MemberId, u8, u8)>;
    /// Signed copy of an already-sent frame, to answer a demand.
    fn resend(&self, phase: u8, subphase: u8) -> Option<Vec<u8>>;
    fn on_abort(&mut self, excluded: &[MemberId]);
    /// Highest causal round this node has observed.
    fn depth(&self) -> u32;
}

impl ProtocolNode for ShuffleMember {
    fn me(&self) -> MemberId {
        self.me()
    }

    fn start(&mut self) -> Vec<Output> {
        ShuffleMember::start(self)
    }

    fn on_envelope(&mut self, env: &Envelope) -> Vec<Output> {
        ShuffleMember::on_envelope(self, env)
    }

    fn done(&self) -> bool {
        ShuffleMember::done(self)
    }

    fn awaiting(&self) -> Vec<(MemberId, u8, u8)> {
        ShuffleMember::awaiting(self)
    }

    fn resend(&self, phase: u8, subphase: u8) -> Option<Vec<u8>> {
        ShuffleMember::resend(self, phase, subphase)
    }

    fn on_abort(&mut self, excluded: &[MemberId]) {
        ShuffleMember::on_abort(self, excluded)
    }

    fn depth(&self) -> u32 {
        ShuffleMember::depth(self)
    }
}

/// Group-level view of how a shuffle ended, assembled by a runner from the
/// per-member results.
pub fn fold_results(results: &std::collections::BTreeMap<MemberId, ShuffleResult>) -> ShuffleResult {
    // Any blame verdict wins (honest members agree on it); otherwise any
    // abort; otherwise completion.
    for r in results.values() {
        if matches!(r, ShuffleResult::Blamed(_)) {
            return r.clone();
        }
    }
    for r in results.values() {
        if matches!(r, ShuffleResult::Aborted { .. }) {
            return r.clone();
        }
    }
    results.values().next().expect("at least one member").clone()
}
