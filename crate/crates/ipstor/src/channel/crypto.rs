//! Keys, key derivation and the authenticated-encryption primitive.
//!
//! Both secured channel modes encrypt with ChaCha20-Poly1305, so ciphertext
//! length always equals plaintext length and every sealed unit carries a
//! 16-byte tag. Directional traffic keys are derived with HMAC-SHA-256 from
//! a 32-byte master secret (negotiated in-band for the record layer,
//! pre-shared for the packet layer).

use chacha20poly1305::aead::{Aead as _, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Authentication tag length appended to every ciphertext.
pub const TAG_LEN: usize = 16;

/// Length of traffic keys and master secrets.
pub const KEY_LEN: usize = 32;

/// AEAD nonce length.
pub const NONCE_LEN: usize = 12;

/// HMAC-SHA-256 of `msg` under `key`.
pub fn hmac_sha256(key: &[u8], msg: &[u8]) -> [u8; 32] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(msg);
    mac.finalize().into_bytes().into()
}

/// Derives a labeled traffic key from a master secret.
pub fn derive_key(master: &[u8], label: &str) -> [u8; KEY_LEN] {
    hmac_sha256(master, label.as_bytes())
}

/// CHAP response digest: SHA-256 over secret followed by challenge.
pub fn chap_digest(secret: &str, challenge: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(secret.as_bytes());
    h.update(challenge);
    h.finalize().into()
}

/// A directional AEAD sealing/opening key.
pub struct SealKey {
    cipher: ChaCha20Poly1305,
}

impl SealKey {
    pub fn new(key: &[u8; KEY_LEN]) -> SealKey {
        SealKey {
            cipher: ChaCha20Poly1305::new(key.into()),
        }
    }

    /// Encrypts `plaintext`, returning ciphertext with the tag appended
    /// (`plaintext.len() + TAG_LEN` bytes). `aad` is authenticated but not
    /// encrypted.
    pub fn seal(&self, nonce: &[u8; NONCE_LEN], aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
        self.cipher
            .encrypt(
                Nonce::from_slice(nonce),
                Payload {
                    msg: plaintext,
                    aad,
                },
            )
            .expect("in-memory encryption cannot fail")
    }

    /// Verifies and decrypts `ciphertext` (tag included). Any bit flip in
    /// ciphertext, tag or AAD fails verification.
    pub fn open(&self, nonce: &[u8; NONCE_LEN], aad: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>> {
        if ciphertext.len() < TAG_LEN {
            return Err(Error::Incomplete {
                needed: TAG_LEN - ciphertext.len(),
            });
        }
        self.cipher
            .decrypt(
                Nonce::from_slice(nonce),
                Payload {
                    msg: ciphertext,
                    aad,
                },
            )
            .map_err(|_| Error::Integrity("authentication tag mismatch".to_string()))
    }
}

/// Builds a nonce from a 64-bit sequence number, with a 4-byte domain
/// prefix to keep nonce spaces of different uses disjoint under one key.
pub fn seq_nonce(domain: [u8; 4], seq: u64) -> [u8; NONCE_LEN] {
    let mut nonce = [0u8; NONCE_LEN];
    nonce[..4].copy_from_slice(&domain);
    nonce[4..].copy_from_slice(&seq.to_be_bytes());
    nonce
}
