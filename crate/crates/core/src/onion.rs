//! Layered (onion) encryption over a fixed-size frame.
//!
//! An onion over core payload `P` under keys `y_1..y_N` is carried in a
//! frame of constant size `|P| + LAYER_OVERHEAD * MAX_LAYERS`, laid out as
//! the live ciphertext followed by a zero pad:
//!
//! ```text
//! [ cipher_j : |P| + 48*j bytes ][ 0x00 pad : 48*(MAX_LAYERS - j) bytes ]
//! ```
//!
//! where `j` is the number of layers still wrapped. Each peel removes one
//! 48-byte layer (ephemeral public key + AEAD tag) and restores the pad, so
//! every intermediate an onion passes through has the same length and every
//! byte of it changes per hop. Constant frame size is what keeps all items
//! of a shuffle vector equal-length at every position in the chain, and
//! keeps per-member anonymization traffic an exact linear function of the
//! datum length.
//!
//! Layer order is canonical: the layer peeled by roster position `k` is the
//! `k`-th outermost, i.e. `seal` encrypts with `keys[N-1]` first and
//! `keys[0]` last.

use rand::CryptoRng;
use thiserror::Error;

use crate::crypto::{
    decrypt, encrypt_with, CryptoError, EncPublicKey, EncRandomness, ENC_OVERHEAD, KEY_LEN,
};

/// Maximum number of layers a frame can hold, i.e. the largest roster this
/// wire format supports.
pub const MAX_LAYERS: usize = 16;
/// Bytes added per layer.
pub const LAYER_OVERHEAD: usize = ENC_OVERHEAD;
/// Total frame overhead on top of the core payload.
pub const FRAME_OVERHEAD: usize = LAYER_OVERHEAD * MAX_LAYERS;

/// Per-layer recorded encryption randomness `R_{i1}..R_{iN}`.
/// `layers[k]` belongs to the layer peeled by roster position `k + 1`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RandomnessTrace {
    pub layers: Vec<EncRandomness>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OnionError {
    #[error("roster of {0} exceeds the {MAX_LAYERS}-layer frame capacity")]
    TooManyLayers(usize),
    #[error("trace has {got} layers, expected {want}")]
    TraceWidth { got: usize, want: usize },
    #[error("frame length {got} does not match expected {want}")]
    FrameLength { got: usize, want: usize },
    #[error("frame pad is not zeroed")]
    PadCorrupt,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Frame size for a core payload of `core_len` bytes.
pub fn frame_len(core_len: usize) -> usize {
    core_len + FRAME_OVERHEAD
}

fn framed(cipher: Vec<u8>, core_len: usize) -> Vec<u8> {
    let mut f = cipher;
    f.resize(frame_len(core_len), 0u8);
    f
}

fn split_frame(frame: &[u8], core_len: usize, layers: usize) -> Result<&[u8], OnionError> {
    let want = frame_len(core_len);
    if frame.len() != want {
        return Err(OnionError::FrameLength { got: frame.len(), want });
    }
    let cipher_len = core_len + LAYER_OVERHEAD * layers;
    if frame[cipher_len..].iter().any(|&b| b != 0) {
        return Err(OnionError::PadCorrupt);
    }
    Ok(&frame[..cipher_len])
}

/// Wrap `core` in one layer per key, drawing fresh layer randomness.
pub fn seal<R: CryptoRng>(
    keys: &[EncPublicKey],
    core: &[u8],
    rng: &mut R,
) -> Result<(Vec<u8>, RandomnessTrace), OnionError> {
    let mut layers = Vec::with_capacity(keys.len());
    for _ in keys {
        let mut r = [0u8; KEY_LEN];
        rng.fill_bytes(&mut r);
        layers.push(r);
    }
    let trace = RandomnessTrace { layers };
    let frame = seal_with(keys, core, &trace)?;
    Ok((frame, trace))
}

/// Deterministic sealing under a recorded trace; replays reproduce the
/// original frame byte for byte.
pub fn seal_with(
    keys: &[EncPublicKey],
    core: &[u8],
    trace: &RandomnessTrace,
) -> Result<Vec<u8>, OnionError> {
    Ok(stack_with(keys, core, trace)?.swap_remove(0))
}

/// Every intermediate frame of the onion, outermost first: `stack[k]` is the
/// frame after `k` peels, so `stack[0]` is the sealed onion and
/// `stack[keys.len()]` is the zero-layer frame around the bare core. The
/// blame verifier uses this to reconstruct what each honest anonymization
/// step must have produced.
pub fn stack_with(
    keys: &[EncPublicKey],
    core: &[u8],
    trace: &RandomnessTrace,
) -> Result<Vec<Vec<u8>>, OnionError> {
    let n = keys.len();
    if n > MAX_LAYERS {
        return Err(OnionError::TooManyLayers(n));
    }
    if trace.layers.len() != n {
        return Err(OnionError::TraceWidth { got: trace.layers.len(), want: n });
    }
    let mut stack = Vec::with_capacity(n + 1);
    stack.push(framed(core.to_vec(), core.len()));
    let mut cipher = core.to_vec();
    for k in (0..n).rev() {
        cipher = encrypt_with(&keys[k], &cipher, &trace.layers[k])?;
        stack.push(framed(cipher.clone(), core.len()));
    }
    stack.reverse();
    Ok(stack)
}

/// Remove the outermost layer of a frame that still has `layers_remaining`
/// of them. Fails hard on tampered ciphertext or pad.
pub fn peel(
    secret: &[u8; KEY_LEN],
    frame: &[u8],
    layers_remaining: usize,
    core_len: usize,
) -> Result<Vec<u8>, OnionError> {
    let cipher = split_frame(frame, core_len, layers_remaining)?;
    let inner = decrypt(secret, cipher)?;
    Ok(framed(inner, core_len))
}

/// Extract the bare core from a fully peeled frame.
pub fn open_core(frame: &[u8], core_len: usize) -> Result<Vec<u8>, OnionError> {
    Ok(split_frame(frame, core_len, 0)?.to_vec())
}

/// Frame a bare core without any layers, the byte form a fully peeled onion
/// takes inside a vector.
pub fn frame_core(core: &[u8]) -> Vec<u8> {
    framed(core.to_vec(), core.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen_encryption, KeyRole};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keys(n: usize) -> Vec<crate::crypto::EncryptionKeyPair> {
        let mut rng = ChaCha20Rng::from_seed([9u8; 32]);
        (0..n)
            .map(|_| keygen_encryption(&mut rng, KeyRole::Primary))
            .collect()
    }

    #[test]
    fn single_layer_matches_plain_encrypt() {
        let kp = keys(1);
        let mut rng = ChaCha20Rng::from_seed([1u8; 32]);
        let (frame, trace) = seal(&[kp[0].public()], b"datum", &mut rng).unwrap();
        let plain = encrypt_with(&kp[0].public(), b"datum", &trace.layers[0]).unwrap();
        assert_eq!(&frame[..plain.len()], &plain[..]);
        assert!(frame[plain.len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn three_layer_peel_in_order_recovers_core() {
        let kps = keys(3);
        let pubs: Vec<_> = kps.iter().map(|k| k.public()).collect();
        let mut rng = ChaCha20Rng::from_seed([2u8; 32]);
        let core = b"fixed-length datum".to_vec();
        let (mut frame, _) = seal(&pubs, &core, &mut rng).unwrap();
        for (k, kp) in kps.iter().enumerate() {
            frame = peel(&kp.secret_bytes(), &frame, 3 - k, core.len()).unwrap();
        }
        assert_eq!(open_core(&frame, core.len()).unwrap(), core);
    }

    #[test]
    fn out_of_order_peel_fails_at_first_wrong_layer() {
        let kps = keys(3);
        let pubs: Vec<_> = kps.iter().map(|k| k.public()).collect();
        let mut rng = ChaCha20Rng::from_seed([3u8; 32]);
        let (frame, _) = seal(&pubs, b"datum", &mut rng).unwrap();
        let err = peel(&kps[1].secret_bytes(), &frame, 3, 5).unwrap_err();
        assert_eq!(err, OnionError::Crypto(CryptoError::DecryptionFailed));
    }

    #[test]
    fn intermediates_are_constant_length() {
        let kps = keys(4);
        let pubs: Vec<_> = kps.iter().map(|k| k.public()).collect();
        let mut rng = ChaCha20Rng::from_seed([4u8; 32]);
        let core = vec![0xabu8; 32];
        let (frame, trace) = seal(&pubs, &core, &mut rng).unwrap();
        let stack = stack_with(&pubs, &core, &trace).unwrap();
        assert_eq!(stack.len(), 5);
        assert_eq!(stack[0], frame);
        for s in &stack {
            assert_eq!(s.len(), frame_len(core.len()));
        }
        assert_eq!(stack[4], frame_core(&core));
    }

    #[test]
    fn replayed_stack_matches_actual_peels() {
        let kps = keys(5);
        let pubs: Vec<_> = kps.iter().map(|k| k.public()).collect();
        let mut rng = ChaCha20Rng::from_seed([5u8; 32]);
        let core = vec![7u8; 16];
        let (mut frame, trace) = seal(&pubs, &core, &mut rng).unwrap();
        let stack = stack_with(&pubs, &core, &trace).unwrap();
        for (k, kp) in kps.iter().enumerate() {
            assert_eq!(frame, stack[k]);
            frame = peel(&kp.secret_bytes(), &frame, 5 - k, core.len()).unwrap();
        }
        assert_eq!(frame, stack[5]);
    }

    #[test]
    fn pad_tamper_is_detected() {
        let kps = keys(2);
        let pubs: Vec<_> = kps.iter().map(|k| k.public()).collect();
        let mut rng = ChaCha20Rng::from_seed([6u8; 32]);
        let (mut frame, _) = seal(&pubs, b"datum", &mut rng).unwrap();
        let last = frame.len() - 1;
        frame[last] ^= 1;
        assert_eq!(
            peel(&kps[0].secret_bytes(), &frame, 2, 5).unwrap_err(),
            OnionError::PadCorrupt
        );
    }

    #[test]
    fn zero_length_core_roundtrips() {
        let kps = keys(3);
        let pubs: Vec<_> = kps.iter().map(|k| k.public()).collect();
        let mut rng = ChaCha20Rng::from_seed([7u8; 32]);
        let (mut frame, _) = seal(&pubs, b"", &mut rng).unwrap();
        assert_eq!(frame.len(), FRAME_OVERHEAD);
        for (k, kp) in kps.iter().enumerate() {
            frame = peel(&kp.secret_bytes(), &frame, 3 - k, 0).unwrap();
        }
        assert_eq!(open_core(&frame, 0).unwrap(), Vec::<u8>::new());
    }
}
