//! Accountable anonymous group messaging.
//!
//! A group of N members exchanges messages with cryptographically strong
//! sender anonymity while keeping disruptors traceable. Two cooperating
//! protocols do the work:
//!
//! * the **shuffle**: each member submits a fixed-length datum under layered
//!   encryption; members take turns permuting and peeling the batch, then
//!   vote go/no-go on the result before releasing the final decryption keys.
//!   Recorded encryption randomness and tamper-evident logs make every
//!   disruption replayable to a third-party-verifiable verdict;
//! * the **bulk transfer**: a DC-net whose transmission schedule is fixed by
//!   shuffling per-member message descriptors (seed assignments and stream
//!   hashes), so variable-length messages move at XOR speed with each slot's
//!   integrity checkable and corruption attributable via anonymous
//!   accusations.
//!
//! A leader-driven wrapper handles round initiation, quorum enforcement,
//! suspicion-based liveness and rerun-until-delivered reliability. Rounds
//! run either on a deterministic in-process network simulator with fault
//! injection, or over TCP.

pub mod crypto;
pub mod faults;
pub mod logchain;
pub mod onion;
pub mod shuffle;
pub mod types;
pub mod wire;
pub mod wirebuf;
