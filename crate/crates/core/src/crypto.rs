//! Cryptographic primitives shared by all protocol modules.
//!
//! Four building blocks: an ed25519 signature scheme, a hybrid public-key
//! cryptosystem (x25519 + ChaCha20-Poly1305) whose encryption randomness is
//! recorded and replayable, an unkeyed SHA-256 hash, and a seeded
//! pseudo-random bit generator (ChaCha20 keystream).
//!
//! The cryptosystem's replay property is load-bearing: the blame phase of the
//! shuffle re-runs recorded encryptions and compares ciphertexts byte for
//! byte, so `encrypt_with(pk, m, r)` must be a pure function. Here the
//! recorded randomness is the 32-byte ephemeral x25519 secret; everything
//! else (shared secret, symmetric key, nonce) derives from it
//! deterministically.

use chacha20poly1305::aead::Aead;
use chacha20poly1305::{ChaCha20Poly1305, KeyInit};
use ed25519_dalek::{Signer, Verifier};
use rand::{CryptoRng, Rng};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Width of all digests (SHA-256).
pub const DIGEST_LEN: usize = 32;
/// Width of PRG seeds.
pub const SEED_LEN: usize = 32;
/// Width of public keys, private keys and recorded encryption randomness.
pub const KEY_LEN: usize = 32;
/// Width of signatures.
pub const SIG_LEN: usize = 64;
/// Ciphertext expansion of a single public-key encryption:
/// ephemeral public key (32) plus AEAD tag (16).
pub const ENC_OVERHEAD: usize = 48;
/// Upper bound on a single plaintext.
pub const MAX_PLAINTEXT: usize = 1 << 24;

pub type Digest = [u8; DIGEST_LEN];
/// Recorded randomness of one public-key encryption: the ephemeral secret.
pub type EncRandomness = [u8; KEY_LEN];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("plaintext of {0} bytes exceeds the configured bound")]
    PlaintextTooLong(usize),
    #[error("encryption randomness must be {KEY_LEN} bytes, got {0}")]
    BadRandomnessWidth(usize),
    #[error("ciphertext failed authentication or is structurally invalid")]
    DecryptionFailed,
    #[error("key material must be {KEY_LEN} bytes, got {0}")]
    BadKeyWidth(usize),
}

/// Unkeyed hash.
pub fn hash(m: &[u8]) -> Digest {
    Sha256::digest(m).into()
}

/// Hash over a sequence of fragments, each length-prefixed so that
/// fragment boundaries are unambiguous.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    h.finalize().into()
}

// ---------------------------------------------------------------------------
// Signatures
// ---------------------------------------------------------------------------

/// Verification half of a signing key pair.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub struct SigPublicKey(pub [u8; KEY_LEN]);

/// A signing key pair `(u, v)`.
#[derive(Clone)]
pub struct SigningKeyPair {
    secret: [u8; KEY_LEN],
    public: SigPublicKey,
}

impl SigningKeyPair {
    pub fn from_secret(secret: [u8; KEY_LEN]) -> Self {
        let sk = ed25519_dalek::SigningKey::from_bytes(&secret);
        Self {
            secret,
            public: SigPublicKey(sk.verifying_key().to_bytes()),
        }
    }

    pub fn public(&self) -> SigPublicKey {
        self.public
    }

    pub fn secret_bytes(&self) -> [u8; KEY_LEN] {
        self.secret
    }

    pub fn sign(&self, m: &[u8]) -> [u8; SIG_LEN] {
        let sk = ed25519_dalek::SigningKey::from_bytes(&self.secret);
        sk.sign(m).to_bytes()
    }
}

impl SigPublicKey {
    pub fn verify(&self, m: &[u8], sig: &[u8]) -> bool {
        let Ok(sig) = <&[u8; SIG_LEN]>::try_from(sig) else {
            return false;
        };
        let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        vk.verify(m, &ed25519_dalek::Signature::from_bytes(sig)).is_ok()
    }
}

pub fn keygen_signing<R: CryptoRng>(rng: &mut R) -> SigningKeyPair {
    let mut secret = [0u8; KEY_LEN];
    rng.fill_bytes(&mut secret);
    SigningKeyPair::from_secret(secret)
}

// ---------------------------------------------------------------------------
// Public-key encryption with recorded randomness
// ---------------------------------------------------------------------------

/// Whether a key pair is a member's long-term primary pair `(x, y)` or a
/// per-run secondary pair `(w, z)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum KeyRole {
    Primary,
    Secondary,
}

/// Public half of an encryption key pair.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub struct EncPublicKey(pub [u8; KEY_LEN]);

/// An encryption key pair `(x, y)` or `(w, z)`.
#[derive(Clone)]
pub struct EncryptionKeyPair {
    secret: [u8; KEY_LEN],
    public: EncPublicKey,
    role: KeyRole,
}

impl EncryptionKeyPair {
    pub fn from_secret(secret: [u8; KEY_LEN], role: KeyRole) -> Self {
        let s = x25519_dalek::StaticSecret::from(secret);
        let public = EncPublicKey(x25519_dalek::PublicKey::from(&s).to_bytes());
        Self { secret, public, role }
    }

    pub fn public(&self) -> EncPublicKey {
        self.public
    }

    pub fn secret_bytes(&self) -> [u8; KEY_LEN] {
        self.secret
    }

    pub fn role(&self) -> KeyRole {
        self.role
    }
}

pub fn keygen_encryption<R: CryptoRng>(rng: &mut R, role: KeyRole) -> EncryptionKeyPair {
    let mut secret = [0u8; KEY_LEN];
    rng.fill_bytes(&mut secret);
    EncryptionKeyPair::from_secret(secret, role)
}

/// Whether `secret` is the private key matching `public`. Needed by the
/// shuffle's decryption phase to validate released secondary keys.
pub fn matches(secret: &[u8; KEY_LEN], public: &EncPublicKey) -> bool {
    let s = x25519_dalek::StaticSecret::from(*secret);
    x25519_dalek::PublicKey::from(&s).to_bytes() == public.0
}

fn layer_key(shared: &[u8; 32], eph_pub: &[u8; 32], recipient: &EncPublicKey) -> [u8; 32] {
    hash_parts(&[b"shufflecast.enc.key", shared, eph_pub, &recipient.0])
}

/// Encrypt `m` under `public`, drawing fresh randomness from `rng`.
/// Returns the ciphertext together with the recorded randomness that
/// reproduces it via [`encrypt_with`].
pub fn encrypt<R: CryptoRng>(
    public: &EncPublicKey,
    m: &[u8],
    rng: &mut R,
) -> Result<(Vec<u8>, EncRandomness), CryptoError> {
    let mut r = [0u8; KEY_LEN];
    rng.fill_bytes(&mut r);
    let ct = encrypt_with(public, m, &r)?;
    Ok((ct, r))
}

/// Deterministic encryption under recorded randomness `r` (the ephemeral
/// x25519 secret). Equal inputs yield byte-identical ciphertexts.
pub fn encrypt_with(public: &EncPublicKey, m: &[u8], r: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if m.len() > MAX_PLAINTEXT {
        return Err(CryptoError::PlaintextTooLong(m.len()));
    }
    let r: &[u8; KEY_LEN] = r
        .try_into()
        .map_err(|_| CryptoError::BadRandomnessWidth(r.len()))?;
    let eph = x25519_dalek::StaticSecret::from(*r);
    let eph_pub = x25519_dalek::PublicKey::from(&eph).to_bytes();
    let shared = eph
        .diffie_hellman(&x25519_dalek::PublicKey::from(public.0))
        .to_bytes();
    let key = layer_key(&shared, &eph_pub, public);
    let aead = ChaCha20Poly1305::new((&key).into());
    // The key is unique per encryption (fresh ephemeral), so a fixed nonce
    // is safe and keeps replay deterministic.
    let body = aead
        .encrypt(&Default::default(), m)
        .expect("aead encryption is infallible for in-bounds plaintexts");
    let mut ct = Vec::with_capacity(KEY_LEN + body.len());
    ct.extend_from_slice(&eph_pub);
    ct.extend_from_slice(&body);
    Ok(ct)
}

/// Deterministic decryption. Fails hard on any tampered or foreign
/// ciphertext, which is what makes "invalid ciphertext" detectable during
/// the shuffle's anonymization phase.
pub fn decrypt(secret: &[u8; KEY_LEN], ct: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ct.len() < ENC_OVERHEAD {
        return Err(CryptoError::DecryptionFailed);
    }
    let eph_pub: [u8; KEY_LEN] = ct[..KEY_LEN].try_into().unwrap();
    let s = x25519_dalek::StaticSecret::from(*secret);
    let my_pub = EncPublicKey(x25519_dalek::PublicKey::from(&s).to_bytes());
    let shared = s
        .diffie_hellman(&x25519_dalek::PublicKey::from(eph_pub))
        .to_bytes();
    let key = layer_key(&shared, &eph_pub, &my_pub);
    let aead = ChaCha20Poly1305::new((&key).into());
    aead.decrypt(&Default::default(), &ct[KEY_LEN..])
        .map_err(|_| CryptoError::DecryptionFailed)
}

// ---------------------------------------------------------------------------
// Pseudo-random bit generator
// ---------------------------------------------------------------------------

/// A PRG seed `s_ij` of fixed width.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Seed(pub [u8; SEED_LEN]);

impl Seed {
    pub fn generate<R: CryptoRng>(rng: &mut R) -> Self {
        let mut b = [0u8; SEED_LEN];
        rng.fill_bytes(&mut b);
        Seed(b)
    }
}

/// First `nbits` bits of the generator seeded with `seed`, packed MSB-first.
/// `prng_bits(s, a)` is a bit-prefix of `prng_bits(s, b)` whenever `a <= b`.
pub fn prng_bits(seed: &Seed, nbits: u64) -> Vec<u8> {
    let nbytes = nbits.div_ceil(8) as usize;
    let mut out = prng_bytes(seed, nbytes);
    let rem = (nbits % 8) as u8;
    if rem != 0 {
        if let Some(last) = out.last_mut() {
            *last &= 0xffu8 << (8 - rem);
        }
    }
    out
}

/// Byte-granular form of [`prng_bits`]; the bulk protocol's ciphertext
/// streams are whole bytes.
pub fn prng_bytes(seed: &Seed, nbytes: usize) -> Vec<u8> {
    let mut rng = ChaCha20Rng::from_seed(seed.0);
    let mut out = vec![0u8; nbytes];
    rng.fill_bytes(&mut out);
    out
}

/// Deterministic per-member RNG used by simulations: all of a member's
/// random choices (keys, permutations, seeds) derive from one seed.
pub fn member_rng(seed: &[u8; 32]) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(*seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(tag: u8) -> ChaCha20Rng {
        ChaCha20Rng::from_seed([tag; 32])
    }

    #[test]
    fn sign_verify_roundtrip() {
        let kp = keygen_signing(&mut rng(1));
        let sig = kp.sign(b"abc");
        assert!(kp.public().verify(b"abc", &sig));
    }

    #[test]
    fn distinct_keypairs_from_independent_entropy() {
        let a = keygen_signing(&mut rng(1));
        let b = keygen_signing(&mut rng(2));
        assert_ne!(a.public(), b.public());
    }

    #[test]
    fn verify_rejects_wrong_public_key() {
        let a = keygen_signing(&mut rng(1));
        let b = keygen_signing(&mut rng(2));
        let sig = a.sign(b"abc");
        assert!(!b.public().verify(b"abc", &sig));
    }

    #[test]
    fn verify_rejects_perturbed_message_and_signature() {
        let kp = keygen_signing(&mut rng(3));
        let msg = b"the quick brown fox".to_vec();
        let sig = kp.sign(&msg);
        let mut r = rng(4);
        for _ in 0..64 {
            let mut m2 = msg.clone();
            let bit = (r.next_u32() as usize) % (m2.len() * 8);
            m2[bit / 8] ^= 1 << (bit % 8);
            assert!(!kp.public().verify(&m2, &sig));

            let mut s2 = sig;
            let bit = (r.next_u32() as usize) % (SIG_LEN * 8);
            s2[bit / 8] ^= 1 << (bit % 8);
            assert!(!kp.public().verify(&msg, &s2));
        }
    }

    #[test]
    fn encrypt_decrypt_roundtrip_including_empty() {
        let kp = keygen_encryption(&mut rng(1), KeyRole::Primary);
        for m in [&b""[..], b"x", b"hello world", &[0u8; 1024]] {
            let (ct, _) = encrypt(&kp.public(), m, &mut rng(2)).unwrap();
            assert_eq!(decrypt(&kp.secret_bytes(), &ct).unwrap(), m);
        }
    }

    #[test]
    fn matches_detects_pairing() {
        let a = keygen_encryption(&mut rng(1), KeyRole::Secondary);
        let b = keygen_encryption(&mut rng(2), KeyRole::Secondary);
        assert!(matches(&a.secret_bytes(), &a.public()));
        assert!(!matches(&a.secret_bytes(), &b.public()));
        assert!(!matches(&b.secret_bytes(), &a.public()));
    }

    #[test]
    fn fresh_randomness_gives_unique_ciphertexts() {
        let kp = keygen_encryption(&mut rng(1), KeyRole::Primary);
        let mut r = rng(2);
        let (c1, _) = encrypt(&kp.public(), b"same message", &mut r).unwrap();
        let (c2, _) = encrypt(&kp.public(), b"same message", &mut r).unwrap();
        assert_ne!(c1, c2);
    }

    #[test]
    fn replay_reproduces_ciphertext_exactly() {
        let kp = keygen_encryption(&mut rng(1), KeyRole::Primary);
        let (ct, r) = encrypt(&kp.public(), b"replay me", &mut rng(2)).unwrap();
        assert_eq!(encrypt_with(&kp.public(), b"replay me", &r).unwrap(), ct);
        assert_eq!(encrypt_with(&kp.public(), b"replay me", &r).unwrap(), ct);
    }

    #[test]
    fn replay_with_perturbed_randomness_differs() {
        let kp = keygen_encryption(&mut rng(1), KeyRole::Primary);
        let (ct, r) = encrypt(&kp.public(), b"replay me", &mut rng(2)).unwrap();
        let mut r2 = r;
        r2[7] ^= 0x01;
        assert_ne!(encrypt_with(&kp.public(), b"replay me", &r2).unwrap(), ct);
    }

    #[test]
    fn bad_randomness_width_rejected() {
        let kp = keygen_encryption(&mut rng(1), KeyRole::Primary);
        assert_eq!(
            encrypt_with(&kp.public(), b"m", &[0u8; 31]).unwrap_err(),
            CryptoError::BadRandomnessWidth(31)
        );
    }

    #[test]
    fn decrypt_rejects_random_bytes() {
        let kp = keygen_encryption(&mut rng(1), KeyRole::Primary);
        let mut r = rng(9);
        for _ in 0..64 {
            let mut junk = vec![0u8; 96];
            r.fill_bytes(&mut junk);
            assert_eq!(
                decrypt(&kp.secret_bytes(), &junk).unwrap_err(),
                CryptoError::DecryptionFailed
            );
        }
    }

    #[test]
    fn decrypt_rejects_wrong_private_key() {
        let a = keygen_encryption(&mut rng(1), KeyRole::Primary);
        let b = keygen_encryption(&mut rng(2), KeyRole::Primary);
        let (ct, _) = encrypt(&a.public(), b"secret", &mut rng(3)).unwrap();
        assert_eq!(
            decrypt(&b.secret_bytes(), &ct).unwrap_err(),
            CryptoError::DecryptionFailed
        );
    }

    #[test]
    fn hash_is_deterministic_and_fixed_width() {
        assert_eq!(hash(b"m"), hash(b"m"));
        assert_eq!(hash(b"").len(), DIGEST_LEN);
    }

    #[test]
    fn hash_bit_perturbation_sweep() {
        let mut r = rng(5);
        for _ in 0..100 {
            let mut m = vec![0u8; 40];
            r.fill_bytes(&mut m);
            let d = hash(&m);
            let bit = (r.next_u32() as usize) % (m.len() * 8);
            let mut m2 = m.clone();
            m2[bit / 8] ^= 1 << (bit % 8);
            assert_ne!(d, hash(&m2));
        }
    }

    #[test]
    fn prng_zero_length_and_prefix() {
        let s = Seed([7u8; 32]);
        assert!(prng_bits(&s, 0).is_empty());
        let short = prng_bits(&s, 8);
        let long = prng_bits(&s, 64);
        assert_eq!(short, long[..1]);
        // Bit-level prefix: 12 bits vs 16 bits agree on the first 12.
        let b12 = prng_bits(&s, 12);
        let b16 = prng_bits(&s, 16);
        assert_eq!(b12[0], b16[0]);
        assert_eq!(b12[1] & 0xf0, b16[1] & 0xf0);
        assert_eq!(b12[1] & 0x0f, 0);
    }

    #[test]
    fn prng_distinct_seeds_diverge_quickly() {
        let mut r = rng(6);
        for _ in 0..100 {
            let mut a = [0u8; 32];
            let mut b = [0u8; 32];
            r.fill_bytes(&mut a);
            r.fill_bytes(&mut b);
            if a == b {
                continue;
            }
            assert_ne!(prng_bits(&Seed(a), 128), prng_bits(&Seed(b), 128));
        }
    }
}
