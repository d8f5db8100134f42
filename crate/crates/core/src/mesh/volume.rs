use std::collections::BTreeMap;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};

const NONCE_LEN: usize = 12;

/// Orchestrator key store; one key per volume.
#[derive(Debug, Default, Clone)]
pub struct KeyValueStore {
    entries: BTreeMap<String, [u8; 32]>,
}

impl KeyValueStore {
    pub fn insert(&mut self, key_id: &str, key: [u8; 32]) {
        self.entries.insert(key_id.to_owned(), key);
    }

    pub fn get(&self, key_id: &str) -> Option<&[u8; 32]> {
        self.entries.get(key_id)
    }

    /// Returns whether a key was present.
    pub fn revoke(&mut self, key_id: &str) -> bool {
        self.entries.remove(key_id).is_some()
    }

    pub fn contains(&self, key_id: &str) -> bool {
        self.entries.contains_key(key_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-agent persistent volume. Blobs are `nonce || ciphertext+tag`.
#[derive(Debug, Clone)]
pub struct EncryptedVolume {
    pub owner_agent: String,
    pub key_id: String,
    pub blobs: BTreeMap<String, Vec<u8>>,
    writes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DecryptFailed;

impl EncryptedVolume {
    pub fn new(owner_agent: &str, key_id: &str) -> Self {
        Self {
            owner_agent: owner_agent.to_owned(),
            key_id: key_id.to_owned(),
            blobs: BTreeMap::new(),
            writes: 0,
        }
    }

    fn aad(&self, name: &str) -> Vec<u8> {
        crate::identity::crypto::encode_fields(&[self.owner_agent.as_bytes(), name.as_bytes()])
    }

    pub(crate) fn seal(&mut self, key: &[u8; 32], name: &str, plaintext: &[u8]) {
        self.writes += 1;
        let mut nonce = [0u8; NONCE_LEN];
        nonce[..8].copy_from_slice(&self.writes.to_be_bytes());
        let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
        let aad = self.aad(name);
        let ct = cipher
            .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad: &aad })
            .expect("encryption of in-memory buffers");
        let mut blob = nonce.to_vec();
        blob.extend_from_slice(&ct);
        self.blobs.insert(name.to_owned(), blob);
    }

    pub(crate) fn open(&self, key: &[u8; 32], name: &str) -> Option<Result<Vec<u8>, DecryptFailed>> {
        let blob = self.blobs.get(name)?;
        if blob.len() < NONCE_LEN {
            return Some(Err(DecryptFailed));
        }
        let (nonce, ct) = blob.split_at(NONCE_LEN);
        let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
        let aad = self.aad(name);
        Some(cipher.decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad: &aad }).map_err(|_| DecryptFailed))
    }
}
