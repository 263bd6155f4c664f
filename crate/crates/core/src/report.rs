//! Machine-readable run reports.
//!
//! One report per run, serialized as a single JSON line so byte-count and
//! verdict sweeps are scriptable. Totals mirror the transport counters
//! exactly; the `body_once` counters measure each broadcast payload once
//! (the efficient-broadcast cost model) and are what the byte-count laws
//! are stated over.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::MemberId;

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct PhaseCounters {
    pub sent_frames: u64,
    /// Wire bytes of every emitted frame copy.
    pub sent_wire: u64,
    /// Wire bytes of every delivered frame.
    pub recv_wire: u64,
    /// Message body bytes (payload minus kind byte), counted once per
    /// logical emission regardless of recipient count.
    pub body_once: u64,
}

impl PhaseCounters {
    pub fn add(&mut self, other: &PhaseCounters) {
        self.sent_frames += other.sent_frames;
        self.sent_wire += other.sent_wire;
        self.recv_wire += other.recv_wire;
        self.body_once += other.body_once;
    }
}

/// Counter key: protocol context ("shuffle", "descriptor", "bulk",
/// "accusation") and wire phase.
pub type CounterKey = (String, u8);

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct MemberBytes {
    pub member: MemberId,
    pub context: String,
    pub phase: u8,
    #[serde(flatten)]
    pub counters: PhaseCounters,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct Totals {
    pub sent_wire: u64,
    pub recv_wire: u64,
    /// Bytes emitted onto blocked or torn-down links, never delivered.
    pub dropped_wire: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub protocol: String,
    pub n: usize,
    pub seed: u64,
    /// completed | blamed | stalled
    pub outcome: String,
    pub exposed: Vec<MemberId>,
    pub excluded: Vec<MemberId>,
    /// member id (as string key) -> fault category names
    pub categories: BTreeMap<String, Vec<String>>,
    pub serial_rounds: u32,
    pub bytes: Vec<MemberBytes>,
    pub totals: Totals,
    pub control_msgs: u64,
    pub sim_time_us: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovered_slots: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrupted_slots: Option<Vec<usize>>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Per-member counters for one context and phase.
    pub fn member_phase(&self, member: MemberId, context: &str, phase: u8) -> PhaseCounters {
        self.bytes
            .iter()
            .filter(|b| b.member == member && b.context == context && b.phase == phase)
            .fold(PhaseCounters::default(), |mut acc, b| {
                acc.add(&b.counters);
                acc
            })
    }

    /// Exit code contract: 0 completed, 3 blamed, 4 stalled.
    pub fn exit_code(&self) -> i32 {
        match self.outcome.as_str() {
            "completed" => 0,
            "blamed" => 3,
            _ => 4,
        }
    }
}
