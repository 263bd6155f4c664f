//! Seeded end-to-end runs over the simulator.
//!
//! A run spec pins everything that can vary — group size, datum length,
//! inputs, network profile, fault plan, seed — and the runner derives all
//! key material and member randomness from the seed, making every run
//! reproducible. With the oracle enabled, the runner additionally retains
//! the ground truth (inputs, destroyed secrets, per-member permutations)
//! that integrity and accountability assertions need.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::crypto::{hash_parts, keygen_encryption, keygen_signing, member_rng, KeyRole};
use crate::faults::{Behavior, FaultPlan};
use crate::node::fold_results;
use crate::report::RunReport;
use crate::shuffle::{BlameVerdict, OracleTap, ShuffleMember, ShuffleResult};
use crate::sim::{base_report, NetConfig, SimNet};
use crate::types::{MemberId, Participant, RoundConfig, SessionNonce};

/// Everything a seeded shuffle run depends on.
#[derive(Clone)]
pub struct ShuffleRunSpec {
    pub n: usize,
    pub datum_len: u64,
    /// Fixed inputs per roster position; `None` draws random data.
    pub inputs: Option<Vec<Vec<u8>>>,
    pub quorum: u32,
    pub seed: u64,
    pub net: NetConfig,
    pub plan: FaultPlan,
    pub oracle: bool,
}

impl ShuffleRunSpec {
    pub fn honest(n: usize, datum_len: u64, seed: u64) -> Self {
        Self {
            n,
            datum_len,
            inputs: None,
            quorum: 1,
            seed,
            net: NetConfig::default(),
            plan: FaultPlan::honest(),
            oracle: false,
        }
    }
}

/// Ground truth retained by the simulator for assertions; never available
/// to the TCP transport.
pub struct ShuffleOracle {
    /// Submitted data, by roster position.
    pub inputs: Vec<Vec<u8>>,
    pub taps: BTreeMap<MemberId, OracleTap>,
    /// Primary private keys, by roster position.
    pub primary_secrets: Vec<[u8; 32]>,
    /// Composed output permutation: `permutation[pos] = slot`, when the run
    /// completed and inputs are distinct.
    pub permutation: Option<Vec<usize>>,
}

pub struct ShuffleRunOutcome {
    pub result: ShuffleResult,
    pub per_member: BTreeMap<MemberId, ShuffleResult>,
    pub report: RunReport,
    pub oracle: Option<ShuffleOracle>,
}

/// Key material and roster derived deterministically from a run seed.
pub struct DerivedGroup {
    pub cfg_template: Vec<Participant>,
    pub signing: Vec<crate::crypto::SigningKeyPair>,
    pub encryption: Vec<crate::crypto::EncryptionKeyPair>,
    pub member_seeds: Vec<[u8; 32]>,
}

pub fn derive_group(n: usize, seed: u64) -> DerivedGroup {
    let mut rng = seeded_rng(b"group", seed);
    let mut cfg_template = Vec::with_capacity(n);
    let mut signing = Vec::with_capacity(n);
    let mut encryption = Vec::with_capacity(n);
    let mut member_seeds = Vec::with_capacity(n);
    for i in 0..n {
        let sign = keygen_signing(&mut rng);
        let enc = keygen_encryption(&mut rng, KeyRole::Primary);
        let mut ms = [0u8; 32];
        rng.fill_bytes(&mut ms);
        cfg_template.push(Participant {
            id: (i + 1) as MemberId,
            enc: enc.public(),
            sig: sign.public(),
        });
        signing.push(sign);
        encryption.push(enc);
        member_seeds.push(ms);
    }
    DerivedGroup { cfg_template, signing, encryption, member_seeds }
}

pub fn seeded_rng(tag: &[u8], seed: u64) -> ChaCha20Rng {
    member_rng(&hash_parts(&[b"shufflecast.sim", tag, &seed.to_be_bytes()]))
}

pub fn run_nonce(tag: &[u8], seed: u64) -> SessionNonce {
    hash_parts(&[b"shufflecast.sim.nonce", tag, &seed.to_be_bytes()])
}

fn random_inputs(n: usize, len: u64, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = seeded_rng(b"inputs", seed);
    (0..n)
        .map(|_| {
            let mut d = vec![0u8; len as usize];
            rng.fill_bytes(&mut d);
            d
        })
        .collect()
}

/// Match completed outputs back to inputs by value; requires distinct
/// inputs.
pub fn compose_permutation(inputs: &[Vec<u8>], outputs: &[Vec<u8>]) -> Option<Vec<usize>> {
    let mut perm = Vec::with_capacity(inputs.len());
    for input in inputs {
        let hits: Vec<usize> = outputs
            .iter()
            .enumerate()
            .filter(|(_, o)| *o == input)
            .map(|(slot, _)| slot)
            .collect();
        match hits.as_slice() {
            [slot] => perm.push(*slot),
            _ => return None,
        }
    }
    Some(perm)
}

pub fn run_shuffle_sim(spec: &ShuffleRunSpec) -> ShuffleRunOutcome {
    let group = derive_group(spec.n, spec.seed);
    let nonce = run_nonce(b"shuffle", spec.seed);
    let cfg = RoundConfig {
        nonce,
        participants: group.cfg_template.clone(),
        datum_len: spec.datum_len,
        quorum: spec.quorum,
    };
    let inputs = spec
        .inputs
        .clone()
        .unwrap_or_else(|| random_inputs(spec.n, spec.datum_len, spec.seed));
    assert_eq!(inputs.len(), spec.n, "one input per member");

    let mut members = Vec::with_capacity(spec.n);
    for (i, p) in cfg.participants.iter().enumerate() {
        let behavior = Behavior::with(spec.plan.strategy_for(p.id).copied());
        let mut m = ShuffleMember::new(
            cfg.clone(),
            p.id,
            group.signing[i].clone(),
            group.encryption[i].clone(),
            inputs[i].clone(),
            group.member_seeds[i],
            behavior,
        )
        .expect("spec produces a valid config");
        if spec.oracle {
            m.enable_oracle();
        }
        members.push(m);
    }

    let mut sim = SimNet::new(spec.net.clone(), members);
    sim.register_context(nonce, "shuffle");
    sim.run();

    let mut report = base_report(&sim, "shuffle", spec.n, spec.seed);
    let members = sim.into_members();
    let per_member: BTreeMap<MemberId, ShuffleResult> = members
        .iter()
        .filter_map(|(id, m)| m.result().map(|r| (*id, r.clone())))
        .collect();
    let result = fold_results(&per_member);
    fill_report(&mut report, &result);

    let oracle = spec.oracle.then(|| {
        let taps: BTreeMap<MemberId, OracleTap> = members
            .iter()
            .filter_map(|(id, m)| m.oracle().map(|t| (*id, t.clone())))
            .collect();
        let permutation = match &result {
            ShuffleResult::Completed { data, .. } => compose_permutation(&inputs, data),
            _ => None,
        };
        ShuffleOracle {
            inputs: inputs.clone(),
            taps,
            primary_secrets: group.encryption.iter().map(|e| e.secret_bytes()).collect(),
            permutation,
        }
    });
    if let Some(o) = &oracle {
        report.permutation = o.permutation.clone();
    }

    ShuffleRunOutcome { result, per_member, report, oracle }
}

pub fn fill_report(report: &mut RunReport, result: &ShuffleResult) {
    match result {
        ShuffleResult::Completed { .. } => {
            report.outcome = "completed".into();
        }
        ShuffleResult::Blamed(verdict) => {
            report.outcome = "blamed".into();
            apply_verdict(report, verdict);
        }
        ShuffleResult::Aborted { excluded } => {
            report.outcome = "stalled".into();
            report.excluded = excluded.clone();
        }
    }
}

pub fn apply_verdict(report: &mut RunReport, verdict: &BlameVerdict) {
    report.exposed = verdict.exposed().into_iter().collect();
    for (m, proofs) in &verdict.proofs {
        report
            .categories
            .entry(m.to_string())
            .or_default()
            .extend(proofs.iter().map(|p| p.category.name().to_string()));
    }
}
