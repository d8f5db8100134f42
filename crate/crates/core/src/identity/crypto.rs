use std::fmt;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

/// Sign/verify contract used by the CA and the token issuer.
pub trait SignatureScheme: Send + Sync + fmt::Debug {
    fn sign(&self, message: &[u8]) -> Vec<u8>;
    fn verify(&self, message: &[u8], signature: &[u8]) -> bool;
}

/// Keyed-MAC scheme (HMAC-SHA256). Test grade: the verifier holds the
/// signing key.
#[derive(Clone)]
pub struct HmacScheme {
    key: [u8; 32],
}

impl HmacScheme {
    pub fn new(key: [u8; 32]) -> Self {
        Self { key }
    }

    fn mac(&self) -> Hmac<Sha256> {
        <Hmac<Sha256> as Mac>::new_from_slice(&self.key).expect("hmac accepts any key length")
    }
}

impl fmt::Debug for HmacScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("HmacScheme(..)")
    }
}

impl SignatureScheme for HmacScheme {
    fn sign(&self, message: &[u8]) -> Vec<u8> {
        let mut mac = self.mac();
        mac.update(message);
        mac.finalize().into_bytes().to_vec()
    }

    fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        let mut mac = self.mac();
        mac.update(message);
        mac.verify_slice(signature).is_ok()
    }
}

/// Workload keypair. Private material stays inside this value.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self { signing: SigningKey::from_bytes(&seed) }
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn fingerprint(&self) -> Vec<u8> {
        fingerprint(&self.public_key())
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.signing.sign(message).to_bytes().to_vec()
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({})", hex_prefix(&self.fingerprint()))
    }
}

pub fn fingerprint(public_key: &[u8]) -> Vec<u8> {
    Sha256::digest(public_key).to_vec()
}

/// Checks a proof of possession made with the key behind `public_key`.
pub fn verify_possession(public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
    let Ok(pk) = <[u8; 32]>::try_from(public_key) else { return false };
    let Ok(key) = VerifyingKey::from_bytes(&pk) else { return false };
    let Ok(sig) = Signature::from_slice(signature) else { return false };
    key.verify(message, &sig).is_ok()
}

pub(crate) fn hex_prefix(bytes: &[u8]) -> String {
    bytes.iter().take(4).map(|b| format!("{b:02x}")).collect()
}

/// Length-prefixed concatenation used as the signed form of records.
pub(crate) fn encode_fields(fields: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in fields {
        out.extend_from_slice(&(f.len() as u64).to_be_bytes());
        out.extend_from_slice(f);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hmac_round_trip_and_tamper() {
        let s = HmacScheme::new([7; 32]);
        let sig = s.sign(b"msg");
        assert!(s.verify(b"msg", &sig));
        assert!(!s.verify(b"msh", &sig));
        assert!(!HmacScheme::new([8; 32]).verify(b"msg", &sig));
    }

    #[test]
    fn possession_proof() {
        let k = KeyPair::from_seed([1; 32]);
        let sig = k.sign(b"nonce");
        assert!(verify_possession(&k.public_key(), b"nonce", &sig));
        let other = KeyPair::from_seed([2; 32]);
        assert!(!verify_possession(&other.public_key(), b"nonce", &sig));
        assert!(!verify_possession(&[0u8; 3], b"nonce", &sig));
    }

    #[test]
    fn field_encoding_is_unambiguous() {
        assert_ne!(encode_fields(&[b"ab", b"c"]), encode_fields(&[b"a", b"bc"]));
    }
}
