//! Deterministic in-process network simulator with fault injection.
//!
//! Members run as state machines over a simulated star-free full mesh with
//! per-link latency and bandwidth. Every run is a pure function of
//! (network config, member seeds, fault plan): events are totally ordered
//! by (time, sequence number) and frame batches are consumed in roster
//! order, so two runs with equal inputs produce byte-identical traces.
//!
//! When the event queue drains before every member has finished, the
//! wrapper's suspicion mechanism kicks in: the blocked member reports the
//! missing sender to the coordinator, the coordinator demands a signed copy
//! of the missing message, relays it if produced, and otherwise times out
//! and aborts the round with the unresponsive member excluded.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::node::ProtocolNode;
use crate::report::{CounterKey, MemberBytes, PhaseCounters, RunReport, Totals};
use crate::shuffle::{Envelope, Output};
use crate::types::{MemberId, SessionNonce};
use crate::wire::{Frame, Msg, PHASE_CONTROL};

/// Simulated link profile. The default mirrors a wide-area star: 50 ms
/// one-way latency and 5 Mbit/s per link.
#[derive(Clone, Debug)]
pub struct NetConfig {
    pub latency_ms: u64,
    pub bandwidth_bps: u64,
    /// Links that silently drop traffic, as (from, to).
    pub blocked: BTreeSet<(MemberId, MemberId)>,
    /// How long the coordinator waits on a demanded message before
    /// declaring the suspect failed.
    pub suspicion_timeout_ms: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            latency_ms: 50,
            bandwidth_bps: 5_000_000,
            blocked: BTreeSet::new(),
            suspicion_timeout_ms: 10_000,
        }
    }
}

enum Event {
    Deliver { from: MemberId, to: MemberId, env: Envelope },
    /// Suspicion bookkeeping hop: (kind, suspector, suspect, phase, subphase).
    Control(ControlHop),
    /// Coordinator timeout for an unanswered demand.
    DemandTimeout { suspect: MemberId, token: u64 },
}

struct ControlHop {
    kind: ControlKind,
    suspector: MemberId,
    suspect: MemberId,
    phase: u8,
    subphase: u8,
    relay: Option<Envelope>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum ControlKind {
    /// suspector -> coordinator
    Suspect,
    /// coordinator -> suspect
    Demand,
    /// suspect -> coordinator (with the demanded frame)
    Response,
    /// coordinator -> suspector (frame relayed)
    Relay,
}

pub struct SimNet<N: ProtocolNode> {
    pub net: NetConfig,
    members: BTreeMap<MemberId, N>,
    roster: Vec<MemberId>,
    queue: BinaryHeap<(std::cmp::Reverse<(u64, u64)>, usize)>,
    events: Vec<Option<Event>>,
    now_us: u64,
    seq: u64,
    link_free_us: BTreeMap<(MemberId, MemberId), u64>,
    contexts: BTreeMap<SessionNonce, String>,
    counters: BTreeMap<(MemberId, CounterKey), PhaseCounters>,
    totals: Totals,
    control_msgs: u64,
    escalated: BTreeSet<(MemberId, MemberId, u8, u8)>,
    unresolved_demands: BTreeMap<u64, MemberId>,
    demand_token: u64,
    aborted: Option<Vec<MemberId>>,
    max_events: u64,
}

impl<N: ProtocolNode> SimNet<N> {
    pub fn new(net: NetConfig, members: Vec<N>) -> Self {
        let roster: Vec<MemberId> = members.iter().map(|m| m.me()).collect();
        Self {
            net,
            members: members.into_iter().map(|m| (m.me(), m)).collect(),
            roster,
            queue: BinaryHeap::new(),
            events: Vec::new(),
            now_us: 0,
            seq: 0,
            link_free_us: BTreeMap::new(),
            contexts: BTreeMap::new(),
            counters: BTreeMap::new(),
            totals: Totals::default(),
            control_msgs: 0,
            escalated: BTreeSet::new(),
            unresolved_demands: BTreeMap::new(),
            demand_token: 0,
            aborted: None,
            max_events: 50_000_000,
        }
    }

    /// Name the protocol context a session nonce belongs to, for counter
    /// bucketing ("shuffle", "descriptor", "bulk", "accusation").
    pub fn register_context(&mut self, nonce: SessionNonce, label: &str) {
        self.contexts.insert(nonce, label.to_string());
    }

    pub fn members(&self) -> impl Iterator<Item = &N> {
        self.members.values()
    }

    pub fn member(&self, id: MemberId) -> &N {
        &self.members[&id]
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn control_msgs(&self) -> u64 {
        self.control_msgs
    }

    pub fn aborted(&self) -> Option<&[MemberId]> {
        self.aborted.as_deref()
    }

    fn push(&mut self, at_us: u64, event: Event) {
        let idx = self.events.len();
        self.events.push(Some(event));
        self.queue.push((std::cmp::Reverse((at_us, self.seq)), idx));
        self.seq += 1;
    }

    /// Serialize a frame copy onto a link: transmission occupies the link,
    /// then propagation adds the latency.
    fn link_delivery_us(&mut self, from: MemberId, to: MemberId, bytes: usize) -> u64 {
        let free = self.link_free_us.entry((from, to)).or_insert(0);
        let start = self.now_us.max(*free);
        let tx = (bytes as u64) * 8 * 1_000_000 / self.net.bandwidth_bps.max(1);
        *free = start + tx;
        start + tx + self.net.latency_ms * 1000
    }

    fn counter(&mut self, member: MemberId, frame: &Frame) -> &mut PhaseCounters {
        let label = self
            .contexts
            .get(&frame.nonce)
            .cloned()
            .unwrap_or_else(|| "unknown".to_string());
        self.counters
            .entry((member, (label, frame.phase)))
            .or_default()
    }

    fn route(&mut self, from: MemberId, outputs: Vec<Output>) {
        for out in outputs {
            let Ok(frame) = Frame::decode(&out.env.frame) else {
                continue;
            };
            let body = Msg::body_len(&frame.payload) as u64;
            let c = self.counter(from, &frame);
            c.sent_frames += 1;
            c.body_once += body;
            for &to in &out.to {
                if to == from {
                    continue;
                }
                let len = out.env.frame.len() as u64;
                self.counter(from, &frame).sent_wire += len;
                self.totals.sent_wire += len;
                if self.net.blocked.contains(&(from, to)) {
                    self.totals.dropped_wire += len;
                    continue;
                }
                let at = self.link_delivery_us(from, to, out.env.frame.len());
                self.push(at, Event::Deliver { from, to, env: out.env.clone() });
            }
        }
    }

    fn all_done(&self) -> bool {
        self.members.values().all(|m| m.done())
    }

    /// Latency-and-queue hop for control traffic (sizes are not part of the
    /// protocol byte laws; hops are counted, not measured).
    fn push_control(&mut self, hop: ControlHop) {
        let at = self.now_us + self.net.latency_ms * 1000;
        self.control_msgs += 1;
        self.push(at, Event::Control(hop));
    }

    fn abort_all(&mut self, excluded: Vec<MemberId>) {
        for m in self.members.values_mut() {
            m.on_abort(&excluded);
        }
        self.aborted = Some(excluded);
    }

    /// One suspicion escalation per quiescent point: the lowest blocked
    /// (waiter, missing sender) pair that has not been escalated yet.
    fn escalate(&mut self) -> bool {
        if self.aborted.is_some() {
            return false;
        }
        let mut stalls: Vec<(MemberId, MemberId, u8, u8)> = Vec::new();
        for (id, m) in &self.members {
            if m.done() {
                continue;
            }
            for (from, phase, subphase) in m.awaiting() {
                stalls.push((*id, from, phase, subphase));
            }
        }
        stalls.sort_unstable();
        for s in stalls {
            if self.escalated.insert(s) {
                let (suspector, suspect, phase, subphase) = s;
                self.push_control(ControlHop {
                    kind: ControlKind::Suspect,
                    suspector,
                    suspect,
                    phase,
                    subphase,
                    relay: None,
                });
                return true;
            }
        }
        false
    }

    fn handle_control(&mut self, hop: ControlHop) {
        match hop.kind {
            ControlKind::Suspect => {
                self.push_control(ControlHop { kind: ControlKind::Demand, ..hop });
            }
            ControlKind::Demand => {
                let response = self
                    .members
                    .get(&hop.suspect)
                    .and_then(|m| m.resend(hop.phase, hop.subphase));
                match response {
                    Some(frame) => {
                        self.push_control(ControlHop {
                            kind: ControlKind::Response,
                            relay: Some(Envelope { frame, depth: 0 }),
                            ..hop
                        });
                    }
                    None => {
                        // The suspect has nothing to offer; the coordinator
                        // times out and declares it failed.
                        self.demand_token += 1;
                        let token = self.demand_token;
                        self.unresolved_demands.insert(token, hop.suspect);
                        let at = self.now_us + self.net.suspicion_timeout_ms * 1000;
                        self.push(at, Event::DemandTimeout { suspect: hop.suspect, token });
                    }
                }
            }
            ControlKind::Response => {
                self.push_control(ControlHop { kind: ControlKind::Relay, ..hop });
            }
            ControlKind::Relay => {
                if let Some(env) = hop.relay {
                    let outputs = self
                        .members
                        .get_mut(&hop.suspector)
                        .map(|m| m.on_envelope(&env))
                        .unwrap_or_default();
                    self.route(hop.suspector, outputs);
                }
            }
        }
    }

    /// Drive the run to completion. Returns true if every member finished.
    pub fn run(&mut self) -> bool {
        let starts: Vec<MemberId> = self.roster.clone();
        for id in starts {
            let outputs = self.members.get_mut(&id).map(|m| m.start()).unwrap_or_default();
            self.route(id, outputs);
        }
        let mut processed = 0u64;
        loop {
            while let Some((std::cmp::Reverse((t, _)), idx)) = self.queue.pop() {
                processed += 1;
                assert!(processed < self.max_events, "simulation did not converge");
                self.now_us = t;
                let Some(event) = self.events[idx].take() else {
                    continue;
                };
                match event {
                    Event::Deliver { to, env, .. } => {
                        if let Ok(frame) = Frame::decode(&env.frame) {
                            let len = env.frame.len() as u64;
                            self.counter(to, &frame).recv_wire += len;
                            self.totals.recv_wire += len;
                        }
                        let outputs = self
                            .members
                            .get_mut(&to)
                            .map(|m| m.on_envelope(&env))
                            .unwrap_or_default();
                        self.route(to, outputs);
                    }
                    Event::Control(hop) => self.handle_control(hop),
                    Event::DemandTimeout { suspect, token } => {
                        // A suspect that produced the demanded frame in the
                        // meantime has been cleared by progress; only an
                        // unresolved demand fails it.
                        if self.unresolved_demands.remove(&token).is_some()
                            && self.aborted.is_none()
                            && !self.all_done()
                        {
                            self.abort_all(vec![suspect]);
                        }
                    }
                }
            }
            if self.all_done() {
                return true;
            }
            if !self.escalate() {
                // Nothing left to try: mark the remaining blockers failed.
                let mut blockers: BTreeSet<MemberId> = BTreeSet::new();
                for m in self.members.values() {
                    if !m.done() {
                        for (from, _, _) in m.awaiting() {
                            blockers.insert(from);
                        }
                    }
                }
                if blockers.is_empty() || self.aborted.is_some() {
                    return self.all_done();
                }
                self.abort_all(blockers.into_iter().collect());
                return self.all_done();
            }
        }
    }

    /// Per-member per-(context, phase) counters.
    pub fn counters(&self) -> Vec<MemberBytes> {
        self.counters
            .iter()
            .map(|((member, (context, phase)), c)| MemberBytes {
                member: *member,
                context: context.clone(),
                phase: *phase,
                counters: c.clone(),
            })
            .collect()
    }

    pub fn totals(&self) -> Totals {
        self.totals.clone()
    }

    pub fn max_depth(&self) -> u32 {
        self.members.values().map(|m| m.depth()).max().unwrap_or(0)
    }

    pub fn into_members(self) -> BTreeMap<MemberId, N> {
        self.members
    }
}

/// Build the skeleton of a report from transport state; protocol-specific
/// fields are filled by the caller.
pub fn base_report<N: ProtocolNode>(sim: &SimNet<N>, protocol: &str, n: usize, seed: u64) -> RunReport {
    RunReport {
        protocol: protocol.to_string(),
        n,
        seed,
        outcome: String::new(),
        exposed: Vec::new(),
        excluded: Vec::new(),
        categories: BTreeMap::new(),
        serial_rounds: sim.max_depth(),
        bytes: sim.counters(),
        totals: sim.totals(),
        control_msgs: sim.control_msgs(),
        sim_time_us: sim.now_us(),
        permutation: None,
        recovered_slots: None,
        corrupted_slots: None,
    }
}

/// Control frames exist on the wire for the TCP transport; the simulator
/// models the same hops without materializing signatures.
pub const CONTROL_PHASE: u8 = PHASE_CONTROL;
