//! Shared protocol identifiers and the per-run configuration every signed
//! message cites.

use thiserror::Error;

use crate::crypto::{EncPublicKey, SigPublicKey, KEY_LEN};
use crate::onion::MAX_LAYERS;
use crate::wirebuf::{Reader, Writer};

/// Long-term member identity. Roster positions are derived from the order
/// of the participant list, not from the id value.
pub type MemberId = u32;

/// Unique round identifier `n_R`.
pub type SessionNonce = [u8; 32];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Participant {
    pub id: MemberId,
    /// Primary public encryption key `y_i`.
    pub enc: EncPublicKey,
    /// Signing public key `v_i`.
    pub sig: SigPublicKey,
}

/// The shared context of one protocol run: session nonce, ordered roster,
/// fixed datum length and quorum.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RoundConfig {
    pub nonce: SessionNonce,
    pub participants: Vec<Participant>,
    /// Fixed shuffle datum length in bytes.
    pub datum_len: u64,
    /// Minimum roster size an honest member will join.
    pub quorum: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("roster is empty")]
    EmptyRoster,
    #[error("roster of {0} exceeds the supported maximum of {MAX_LAYERS}")]
    RosterTooLarge(usize),
    #[error("participant ids must be distinct and strictly increasing")]
    UnorderedRoster,
    #[error("roster of {roster} is below quorum {quorum}")]
    QuorumUnmet { roster: usize, quorum: u32 },
    #[error("malformed config encoding")]
    Malformed,
}

impl RoundConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.participants.is_empty() {
            return Err(ConfigError::EmptyRoster);
        }
        if self.participants.len() > MAX_LAYERS {
            return Err(ConfigError::RosterTooLarge(self.participants.len()));
        }
        if !self.participants.windows(2).all(|w| w[0].id < w[1].id) {
            return Err(ConfigError::UnorderedRoster);
        }
        if (self.participants.len() as u32) < self.quorum {
            return Err(ConfigError::QuorumUnmet {
                roster: self.participants.len(),
                quorum: self.quorum,
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.participants.len()
    }

    /// Roster position of `id`, zero-based.
    pub fn position(&self, id: MemberId) -> Option<usize> {
        self.participants.iter().position(|p| p.id == id)
    }

    pub fn participant(&self, id: MemberId) -> Option<&Participant> {
        self.participants.iter().find(|p| p.id == id)
    }

    /// Position `k` (zero-based) in roster order.
    pub fn at(&self, k: usize) -> &Participant {
        &self.participants[k]
    }

    /// Broadcast coordinator for the run: the first roster member.
    pub fn leader(&self) -> MemberId {
        self.participants[0].id
    }

    pub fn member_ids(&self) -> impl Iterator<Item = MemberId> + '_ {
        self.participants.iter().map(|p| p.id)
    }

    /// Primary public keys in roster order, the onion layer order.
    pub fn enc_keys(&self) -> Vec<EncPublicKey> {
        self.participants.iter().map(|p| p.enc).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes_fixed(&self.nonce);
        w.u64(self.datum_len);
        w.u32(self.quorum);
        w.u32(self.participants.len() as u32);
        for p in &self.participants {
            w.u32(p.id);
            w.bytes_fixed(&p.enc.0);
            w.bytes_fixed(&p.sig.0);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ConfigError> {
        let mut r = Reader::new(bytes);
        let parse = |r: &mut Reader| -> Option<RoundConfig> {
            let nonce: SessionNonce = r.bytes_fixed::<32>()?;
            let datum_len = r.u64()?;
            let quorum = r.u32()?;
            let count = r.u32()? as usize;
            if count > MAX_LAYERS {
                return None;
            }
            let mut participants = Vec::with_capacity(count);
            for _ in 0..count {
                let id = r.u32()?;
                let enc = EncPublicKey(r.bytes_fixed::<KEY_LEN>()?);
                let sig = SigPublicKey(r.bytes_fixed::<KEY_LEN>()?);
                participants.push(Participant { id, enc, sig });
            }
            if !r.is_empty() {
                return None;
            }
            Some(RoundConfig { nonce, participants, datum_len, quorum })
        };
        parse(&mut r).ok_or(ConfigError::Malformed)
    }

    /// Nonce for a protocol nested inside this run (the bulk protocol's
    /// descriptor and accusation shuffles).
    pub fn derived_nonce(&self, tag: &[u8]) -> SessionNonce {
        crate::crypto::hash_parts(&[b"shufflecast.derived", &self.nonce, tag])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(ids: &[MemberId], quorum: u32) -> RoundConfig {
        RoundConfig {
            nonce: [1u8; 32],
            participants: ids
                .iter()
                .map(|&id| Participant {
                    id,
                    enc: EncPublicKey([id as u8; 32]),
                    sig: SigPublicKey([id as u8 + 100; 32]),
                })
                .collect(),
            datum_len: 32,
            quorum,
        }
    }

    #[test]
    fn validation_rules() {
        assert!(cfg(&[1, 2, 3], 3).validate().is_ok());
        assert_eq!(
            cfg(&[1, 2], 3).validate().unwrap_err(),
            ConfigError::QuorumUnmet { roster: 2, quorum: 3 }
        );
        assert_eq!(cfg(&[2, 1], 0).validate().unwrap_err(), ConfigError::UnorderedRoster);
        assert_eq!(cfg(&[1, 1], 0).validate().unwrap_err(), ConfigError::UnorderedRoster);
        assert_eq!(cfg(&[], 0).validate().unwrap_err(), ConfigError::EmptyRoster);
    }

    #[test]
    fn encode_decode_roundtrip() {
        let c = cfg(&[1, 3, 7], 2);
        assert_eq!(RoundConfig::decode(&c.encode()).unwrap(), c);
    }

    #[test]
    fn truncated_config_rejected() {
        let enc = cfg(&[1, 2, 3], 2).encode();
        for cut in 0..enc.len() {
            assert_eq!(
                RoundConfig::decode(&enc[..cut]).unwrap_err(),
                ConfigError::Malformed,
                "cut at {cut}"
            );
        }
    }
}
