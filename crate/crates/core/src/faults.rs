//! Pluggable adversarial behaviors for simulated runs.
//!
//! A fault plan assigns at most one strategy per member; the member state
//! machines consult it at the few points where a byzantine participant can
//! deviate (what it signs, what it sends, whether it sends at all). The
//! plan doubles as ground truth: simulator oracles assert verdicts against
//! the injected culprits.

use crate::types::MemberId;

/// The catalog of adversarial actions.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FaultAction {
    /// Phase 3: overwrite one vector entry with a copy of another.
    DuplicateEntry,
    /// Phase 3: overwrite one vector entry with random bytes.
    ReplaceEntry,
    /// Phase 3: emit a vector with one entry removed.
    DropEntry,
    /// Phase 4: vote no-go although the member's ciphertext is present.
    FalseFlag,
    /// Phase 4: vote go but cite a wrong final-vector digest.
    WrongDigest,
    /// Phase 5a: release a private key that does not match the published
    /// secondary public key.
    BadSecondaryKey,
    /// Bulk data phase: flip a bit in the stream assigned for a peer's slot.
    CorruptSlotBits,
    /// Bulk data phase: corrupt the member's own slot (self-sabotage; must
    /// end in a dropped slot, not an exposure).
    CorruptOwnSlot,
    /// Bulk blame phase: self-corrupt, then submit a fabricated accusation
    /// against an honest member.
    InvalidAccusation,
    /// Send conflicting signed go/no-go messages to different members.
    Equivocate,
    /// Stop sending from the trigger phase onward.
    GoSilent,
    /// Victim-side toggle: leave a corrupted slot unaccused.
    WithholdAccusation,
}

impl FaultAction {
    /// CLI / report spelling.
    pub fn name(self) -> &'static str {
        match self {
            FaultAction::DuplicateEntry => "duplicate_entry",
            FaultAction::ReplaceEntry => "replace_entry",
            FaultAction::DropEntry => "drop_entry",
            FaultAction::FalseFlag => "false_flag",
            FaultAction::WrongDigest => "wrong_digest",
            FaultAction::BadSecondaryKey => "bad_secondary_key",
            FaultAction::CorruptSlotBits => "corrupt_slot_bits",
            FaultAction::CorruptOwnSlot => "corrupt_own_slot",
            FaultAction::InvalidAccusation => "invalid_accusation",
            FaultAction::Equivocate => "equivocate",
            FaultAction::GoSilent => "go_silent",
            FaultAction::WithholdAccusation => "withhold_accusation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "duplicate_entry" => FaultAction::DuplicateEntry,
            "replace_entry" => FaultAction::ReplaceEntry,
            "drop_entry" => FaultAction::DropEntry,
            "false_flag" => FaultAction::FalseFlag,
            "wrong_digest" => FaultAction::WrongDigest,
            "bad_secondary_key" => FaultAction::BadSecondaryKey,
            "corrupt_slot_bits" => FaultAction::CorruptSlotBits,
            "corrupt_own_slot" => FaultAction::CorruptOwnSlot,
            "invalid_accusation" => FaultAction::InvalidAccusation,
            "equivocate" => FaultAction::Equivocate,
            "go_silent" => FaultAction::GoSilent,
            "withhold_accusation" => FaultAction::WithholdAccusation,
            _ => return None,
        })
    }

    /// Whether the action constitutes provable misbehavior by its target
    /// (as opposed to self-sabotage or passive withholding).
    pub fn is_culpable(self) -> bool {
        !matches!(
            self,
            FaultAction::CorruptOwnSlot
                | FaultAction::InvalidAccusation
                | FaultAction::WithholdAccusation
        )
    }
}

/// One member's assigned misbehavior.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct FaultStrategy {
    pub target: MemberId,
    pub action: FaultAction,
    /// Trigger phase, for actions where it is meaningful (`GoSilent`).
    pub phase: Option<u8>,
}

impl FaultStrategy {
    pub fn new(target: MemberId, action: FaultAction) -> Self {
        Self { target, action, phase: None }
    }

    /// Parse `action@member` or `action@member:phase`.
    pub fn parse(s: &str) -> Option<Self> {
        let (action, rest) = s.split_once('@')?;
        let action = FaultAction::parse(action)?;
        let (member, phase) = match rest.split_once(':') {
            Some((m, p)) => (m, Some(p.parse().ok()?)),
            None => (rest, None),
        };
        Some(FaultStrategy { target: member.parse().ok()?, action, phase })
    }
}

/// The full adversarial configuration of a run.
#[derive(Clone, Default, Debug)]
pub struct FaultPlan {
    pub strategies: Vec<FaultStrategy>,
}

impl FaultPlan {
    pub fn honest() -> Self {
        Self::default()
    }

    pub fn single(s: FaultStrategy) -> Self {
        Self { strategies: vec![s] }
    }

    pub fn strategy_for(&self, member: MemberId) -> Option<&FaultStrategy> {
        self.strategies.iter().find(|s| s.target == member)
    }

    /// Members whose strategy is provable misbehavior: the set a correct
    /// verdict must expose.
    pub fn culprits(&self) -> Vec<MemberId> {
        self.strategies
            .iter()
            .filter(|s| s.action.is_culpable())
            .map(|s| s.target)
            .collect()
    }
}

/// Behavior handle handed to a member state machine.
#[derive(Clone, Default, Debug)]
pub struct Behavior {
    pub strategy: Option<FaultStrategy>,
}

impl Behavior {
    pub fn honest() -> Self {
        Self::default()
    }

    pub fn with(strategy: Option<FaultStrategy>) -> Self {
        Self { strategy }
    }

    pub fn acts(&self, action: FaultAction) -> bool {
        self.strategy.map(|s| s.action == action).unwrap_or(false)
    }

    /// Phase at which a silent member stops transmitting, if any.
    pub fn silent_from(&self) -> Option<u8> {
        self.strategy
            .filter(|s| s.action == FaultAction::GoSilent)
            .map(|s| s.phase.unwrap_or(3))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fault_specs() {
        let s = FaultStrategy::parse("duplicate_entry@2").unwrap();
        assert_eq!(s.target, 2);
        assert_eq!(s.action, FaultAction::DuplicateEntry);
        assert_eq!(s.phase, None);

        let s = FaultStrategy::parse("go_silent@4:2").unwrap();
        assert_eq!(s.target, 4);
        assert_eq!(s.phase, Some(2));

        assert!(FaultStrategy::parse("bogus@1").is_none());
        assert!(FaultStrategy::parse("false_flag").is_none());
    }

    #[test]
    fn name_parse_roundtrip() {
        for a in [
            FaultAction::DuplicateEntry,
            FaultAction::ReplaceEntry,
            FaultAction::DropEntry,
            FaultAction::FalseFlag,
            FaultAction::WrongDigest,
            FaultAction::BadSecondaryKey,
            FaultAction::CorruptSlotBits,
            FaultAction::CorruptOwnSlot,
            FaultAction::InvalidAccusation,
            FaultAction::Equivocate,
            FaultAction::GoSilent,
            FaultAction::WithholdAccusation,
        ] {
            assert_eq!(FaultAction::parse(a.name()), Some(a));
        }
    }
}
