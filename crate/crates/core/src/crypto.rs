//! Hashing, sealing of data packages for nodes and encryption of result
//! shares for buyers.
//!
//! Both directions use the same hybrid construction: an ephemeral X25519 key
//! agreement with the recipient's static key, HKDF-SHA-256 to derive a
//! ChaCha20-Poly1305 key, and a fresh random 96-bit nonce.

use std::fmt;
use std::str::FromStr;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, Verifier};
use hkdf::Hkdf;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey, StaticSecret};

const SEAL_INFO: &[u8] = b"tplmarket/v1/package";
const RESULT_INFO: &[u8] = b"tplmarket/v1/result";
pub const NONCE_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    /// Wrong key, or ciphertext / associated data modified.
    #[error("decryption failed")]
    DecryptionFailure,
    #[error("malformed key: {0}")]
    MalformedKey(String),
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(String),
    #[error("invalid signature")]
    BadSignature,
}

/// Base64url without padding, as used by every binary field on the wire.
pub mod b64 {
    use base64::engine::general_purpose::URL_SAFE_NO_PAD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn encode(bytes: impl AsRef<[u8]>) -> String {
        URL_SAFE_NO_PAD.encode(bytes)
    }

    pub fn decode(text: &str) -> Result<Vec<u8>, base64::DecodeError> {
        URL_SAFE_NO_PAD.decode(text)
    }

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        decode(&text).map_err(serde::de::Error::custom)
    }
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// SHA-256 digest of a policy's exact source bytes; serialized as lowercase
/// hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PolicyHash(pub [u8; 32]);

pub fn hash_policy(source: &[u8]) -> PolicyHash {
    PolicyHash(sha256(source))
}

impl fmt::Display for PolicyHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for PolicyHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PolicyHash({self})")
    }
}

impl FromStr for PolicyHash {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(PolicyHash(out))
    }
}

impl Serialize for PolicyHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PolicyHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn array32(bytes: &[u8], what: &str) -> Result<[u8; 32], CryptoError> {
    bytes
        .try_into()
        .map_err(|_| CryptoError::MalformedKey(format!("{what} must be 32 bytes, got {}", bytes.len())))
}

fn decode32(text: &str, what: &str) -> Result<[u8; 32], CryptoError> {
    let bytes = b64::decode(text).map_err(|e| CryptoError::MalformedKey(format!("{what}: {e}")))?;
    array32(&bytes, what)
}

/// X25519 public key of a node or buyer.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncryptionPublicKey(pub [u8; 32]);

impl EncryptionPublicKey {
    pub fn to_b64(&self) -> String {
        b64::encode(self.0)
    }

    pub fn from_b64(text: &str) -> Result<Self, CryptoError> {
        decode32(text, "encryption key").map(EncryptionPublicKey)
    }
}

impl fmt::Debug for EncryptionPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EncryptionPublicKey({})", self.to_b64())
    }
}

impl Serialize for EncryptionPublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_b64())
    }
}

impl<'de> Deserialize<'de> for EncryptionPublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        EncryptionPublicKey::from_b64(&String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// X25519 static secret.
#[derive(Clone)]
pub struct EncryptionKeyPair {
    secret: StaticSecret,
    public: EncryptionPublicKey,
}

impl EncryptionKeyPair {
    pub fn generate() -> Self {
        Self::from_secret_bytes(rand::random())
    }

    pub fn from_secret_bytes(bytes: [u8; 32]) -> Self {
        let secret = StaticSecret::from(bytes);
        let public = EncryptionPublicKey(PublicKey::from(&secret).to_bytes());
        EncryptionKeyPair { secret, public }
    }

    pub fn from_b64(text: &str) -> Result<Self, CryptoError> {
        decode32(text, "encryption secret").map(Self::from_secret_bytes)
    }

    pub fn secret_b64(&self) -> String {
        b64::encode(self.secret.to_bytes())
    }

    pub fn public(&self) -> EncryptionPublicKey {
        self.public
    }
}

impl fmt::Debug for EncryptionKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EncryptionKeyPair({:?})", self.public)
    }
}

/// Ed25519 public key.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct VerificationKey(pub ed25519_dalek::VerifyingKey);

impl VerificationKey {
    pub fn to_b64(&self) -> String {
        b64::encode(self.0.as_bytes())
    }

    pub fn from_b64(text: &str) -> Result<Self, CryptoError> {
        let bytes = decode32(text, "verification key")?;
        ed25519_dalek::VerifyingKey::from_bytes(&bytes)
            .map(VerificationKey)
            .map_err(|e| CryptoError::MalformedKey(e.to_string()))
    }

    pub fn verify(&self, message: &[u8], signature: &[u8]) -> Result<(), CryptoError> {
        let sig = ed25519_dalek::Signature::from_slice(signature).map_err(|_| CryptoError::BadSignature)?;
        self.0.verify(message, &sig).map_err(|_| CryptoError::BadSignature)
    }
}

impl fmt::Debug for VerificationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerificationKey({})", self.to_b64())
    }
}

impl Serialize for VerificationKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_b64())
    }
}

impl<'de> Deserialize<'de> for VerificationKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        VerificationKey::from_b64(&String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Ed25519 signing key.
#[derive(Clone)]
pub struct SigningKeyPair(ed25519_dalek::SigningKey);

impl SigningKeyPair {
    pub fn generate() -> Self {
        Self::from_secret_bytes(rand::random())
    }

    pub fn from_secret_bytes(bytes: [u8; 32]) -> Self {
        SigningKeyPair(ed25519_dalek::SigningKey::from_bytes(&bytes))
    }

    pub fn from_b64(text: &str) -> Result<Self, CryptoError> {
        decode32(text, "signing secret").map(Self::from_secret_bytes)
    }

    pub fn secret_b64(&self) -> String {
        b64::encode(self.0.to_bytes())
    }

    pub fn public(&self) -> VerificationKey {
        VerificationKey(self.0.verifying_key())
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.0.sign(message).to_bytes().to_vec()
    }
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningKeyPair({:?})", self.public())
    }
}

/// Output of one hybrid encryption.
struct Sealed {
    ephemeral_key: [u8; 32],
    nonce: [u8; NONCE_LEN],
    ciphertext: Vec<u8>,
}

fn derive_key(shared: &[u8; 32], label: &[u8], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> Key {
    let hk = Hkdf::<Sha256>::new(None, shared);
    let mut info = Vec::with_capacity(label.len() + 64);
    info.extend_from_slice(label);
    info.extend_from_slice(ephemeral);
    info.extend_from_slice(recipient);
    let mut okm = [0u8; 32];
    hk.expand(&info, &mut okm).expect("32 bytes is a valid HKDF length");
    Key::from(okm)
}

fn hybrid_encrypt(
    plaintext: &[u8],
    recipient: &EncryptionPublicKey,
    label: &[u8],
    aad: &[u8],
) -> Result<Sealed, CryptoError> {
    let eph = StaticSecret::from(rand::random::<[u8; 32]>());
    let eph_pub = PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&PublicKey::from(recipient.0));
    if !shared.was_contributory() {
        return Err(CryptoError::MalformedKey("low-order recipient key".into()));
    }
    let key = derive_key(shared.as_bytes(), label, &eph_pub, &recipient.0);
    let nonce: [u8; NONCE_LEN] = rand::random();
    let ciphertext = ChaCha20Poly1305::new(&key)
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad })
        .expect("ChaCha20-Poly1305 encryption is infallible for in-memory buffers");
    Ok(Sealed {
        ephemeral_key: eph_pub,
        nonce,
        ciphertext,
    })
}

fn hybrid_decrypt(
    ephemeral_key: &[u8],
    nonce: &[u8],
    ciphertext: &[u8],
    recipient: &EncryptionKeyPair,
    label: &[u8],
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let eph: [u8; 32] = ephemeral_key
        .try_into()
        .map_err(|_| CryptoError::MalformedEnvelope("ephemeral key must be 32 bytes".into()))?;
    if nonce.len() != NONCE_LEN {
        return Err(CryptoError::MalformedEnvelope(format!("nonce must be {NONCE_LEN} bytes")));
    }
    let shared = recipient.secret.diffie_hellman(&PublicKey::from(eph));
    if !shared.was_contributory() {
        return Err(CryptoError::DecryptionFailure);
    }
    let key = derive_key(shared.as_bytes(), label, &eph, &recipient.public.0);
    ChaCha20Poly1305::new(&key)
        .decrypt(Nonce::from_slice(nonce), Payload { msg: ciphertext, aad })
        .map_err(|_| CryptoError::DecryptionFailure)
}

/// A data package encrypted for one computation node. The product id is
/// authenticated associated data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedPackage {
    /// Index of the node holding the matching secret key.
    pub recipient: u32,
    pub product_id: String,
    #[serde(with = "b64")]
    pub ephemeral_key: Vec<u8>,
    #[serde(with = "b64")]
    pub nonce: Vec<u8>,
    #[serde(with = "b64")]
    pub ciphertext: Vec<u8>,
}

pub fn seal_for_node(
    package: &[u8],
    node_key: &EncryptionPublicKey,
    recipient: u32,
    product_id: &str,
) -> Result<SealedPackage, CryptoError> {
    let s = hybrid_encrypt(package, node_key, SEAL_INFO, product_id.as_bytes())?;
    Ok(SealedPackage {
        recipient,
        product_id: product_id.to_owned(),
        ephemeral_key: s.ephemeral_key.to_vec(),
        nonce: s.nonce.to_vec(),
        ciphertext: s.ciphertext,
    })
}

pub fn open_from_seller(sealed: &SealedPackage, node_key: &EncryptionKeyPair) -> Result<Vec<u8>, CryptoError> {
    hybrid_decrypt(
        &sealed.ephemeral_key,
        &sealed.nonce,
        &sealed.ciphertext,
        node_key,
        SEAL_INFO,
        sealed.product_id.as_bytes(),
    )
}

/// A result share encrypted for the buyer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultCiphertext {
    #[serde(with = "b64")]
    pub ephemeral_key: Vec<u8>,
    #[serde(with = "b64")]
    pub nonce: Vec<u8>,
    #[serde(with = "b64")]
    pub ciphertext: Vec<u8>,
}

/// `context` is authenticated but not encrypted; nodes pass the request id
/// and their index so a share cannot be replayed into another response.
pub fn encrypt_result(
    share: &[u8],
    buyer_key: &EncryptionPublicKey,
    context: &[u8],
) -> Result<ResultCiphertext, CryptoError> {
    let s = hybrid_encrypt(share, buyer_key, RESULT_INFO, context)?;
    Ok(ResultCiphertext {
        ephemeral_key: s.ephemeral_key.to_vec(),
        nonce: s.nonce.to_vec(),
        ciphertext: s.ciphertext,
    })
}

pub fn decrypt_result(
    ct: &ResultCiphertext,
    buyer_key: &EncryptionKeyPair,
    context: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    hybrid_decrypt(&ct.ephemeral_key, &ct.nonce, &ct.ciphertext, buyer_key, RESULT_INFO, context)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_digest() {
        assert_eq!(
            hash_policy(b"").to_string(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn policy_hash_serde() {
        let h = hash_policy(b"accept(A, B, C).");
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(json, format!("\"{h}\""));
        assert_eq!(serde_json::from_str::<PolicyHash>(&json).unwrap(), h);
        assert!(serde_json::from_str::<PolicyHash>("\"abcd\"").is_err());
    }

    #[test]
    fn key_round_trips() {
        let k = EncryptionKeyPair::generate();
        assert_eq!(EncryptionKeyPair::from_b64(&k.secret_b64()).unwrap().public(), k.public());
        assert_eq!(EncryptionPublicKey::from_b64(&k.public().to_b64()).unwrap(), k.public());
        let s = SigningKeyPair::generate();
        let sig = s.sign(b"m");
        s.public().verify(b"m", &sig).unwrap();
        assert_eq!(s.public().verify(b"n", &sig), Err(CryptoError::BadSignature));
        assert!(EncryptionPublicKey::from_b64("AAAA").is_err());
    }

    #[test]
    fn low_order_recipient_rejected() {
        let zero = EncryptionPublicKey([0; 32]);
        assert!(matches!(seal_for_node(b"x", &zero, 1, "p"), Err(CryptoError::MalformedKey(_))));
    }

    #[test]
    fn product_id_is_authenticated() {
        let node = EncryptionKeyPair::generate();
        let mut sealed = seal_for_node(b"payload", &node.public(), 1, "p1").unwrap();
        assert_eq!(open_from_seller(&sealed, &node).unwrap(), b"payload");
        sealed.product_id = "p2".into();
        assert_eq!(open_from_seller(&sealed, &node), Err(CryptoError::DecryptionFailure));
    }
}
