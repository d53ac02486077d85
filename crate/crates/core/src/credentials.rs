//! Verifiable credentials and presentations.
//!
//! Issuers sign the canonical JSON of a credential without its
//! `issuer_signature` field; holders sign the canonical JSON of
//! `{mainCredential, additional, challenge}`. Issuer keys are looked up by
//! issuer id through an [`IssuerKeys`] source, normally the DID resolver.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::builtins::{is_did, TrustServices};
use crate::canonical::{canonical_value, to_canonical_bytes};
use crate::crypto::{b64, sha256, EncryptionKeyPair, EncryptionPublicKey, SigningKeyPair, VerificationKey};
use crate::tpl::{BuiltinError, BuiltinRegistry, EvalError, Policy, Program, Session, Term};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClaimValue {
    Int(i64),
    Text(String),
}

impl From<&str> for ClaimValue {
    fn from(s: &str) -> Self {
        ClaimValue::Text(s.to_owned())
    }
}

impl From<i64> for ClaimValue {
    fn from(v: i64) -> Self {
        ClaimValue::Int(v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub id: String,
    /// DID of the holder.
    pub subject: String,
    pub issuer: String,
    pub claims: BTreeMap<String, ClaimValue>,
    pub verification_key: VerificationKey,
    pub encryption_key: EncryptionPublicKey,
    #[serde(with = "b64")]
    pub issuer_signature: Vec<u8>,
}

impl Credential {
    /// Bytes covered by the issuer signature.
    pub fn signing_payload(&self) -> Vec<u8> {
        let mut v = serde_json::to_value(self).expect("credential serializes");
        v.as_object_mut().expect("object").remove("issuer_signature");
        canonical_value(&v).expect("credential has no floats")
    }
}

/// 32-byte challenge, hex on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Challenge(pub [u8; 32]);

impl std::fmt::Debug for Challenge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Challenge({})", hex::encode(self.0))
    }
}

impl std::fmt::Display for Challenge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for Challenge {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Challenge {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&text, &mut out).map_err(serde::de::Error::custom)?;
        Ok(Challenge(out))
    }
}

impl Challenge {
    /// Digest of the canonical JSON of `value`.
    pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> Result<Challenge, crate::canonical::CanonicalError> {
        Ok(Challenge(sha256(&to_canonical_bytes(value)?)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presentation {
    #[serde(rename = "mainCredential")]
    pub main_credential: Credential,
    #[serde(default)]
    pub additional: Vec<Credential>,
    pub challenge: Challenge,
    #[serde(with = "b64")]
    pub holder_signature: Vec<u8>,
}

#[derive(Serialize)]
struct HolderPayload<'a> {
    #[serde(rename = "mainCredential")]
    main_credential: &'a Credential,
    additional: &'a [Credential],
    challenge: Challenge,
}

impl Presentation {
    /// Bytes covered by the holder signature.
    pub fn signing_payload(&self) -> Vec<u8> {
        holder_payload(&self.main_credential, &self.additional, self.challenge)
    }

    pub fn credentials(&self) -> impl Iterator<Item = &Credential> {
        std::iter::once(&self.main_credential).chain(&self.additional)
    }

    /// The presentation as a JSON document, the form policies navigate.
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("presentation serializes")
    }
}

fn holder_payload(main: &Credential, additional: &[Credential], challenge: Challenge) -> Vec<u8> {
    to_canonical_bytes(&HolderPayload {
        main_credential: main,
        additional,
        challenge,
    })
    .expect("presentation has no floats")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CredentialError {
    #[error("holder signature does not verify")]
    BadHolderSignature,
    #[error("presentation challenge does not match the request")]
    ChallengeMismatch,
    #[error("issuer signature of credential `{0}` does not verify")]
    BadIssuerSignature(String),
    /// The key source could not be reached; distinct from a bad signature
    /// so callers can report an infrastructure failure.
    #[error("issuer key for `{issuer}` unavailable: {reason}")]
    IssuerKeyUnavailable { issuer: String, reason: String },
    #[error("credentials {0:?} have a different subject than the main credential")]
    SubjectMismatch(Vec<String>),
    #[error("credential `{id}` has malformed subject `{subject}`")]
    InvalidSubject { id: String, subject: String },
}

/// Source of issuer verification keys.
pub trait IssuerKeys {
    /// `Ok(None)` when the issuer is unknown.
    fn issuer_key(&self, issuer: &str) -> Result<Option<VerificationKey>, String>;
}

impl IssuerKeys for HashMap<String, VerificationKey> {
    fn issuer_key(&self, issuer: &str) -> Result<Option<VerificationKey>, String> {
        Ok(self.get(issuer).copied())
    }
}

/// Resolves the issuer's DID document and reads `verification_key`.
impl IssuerKeys for TrustServices {
    fn issuer_key(&self, issuer: &str) -> Result<Option<VerificationKey>, String> {
        let doc = match self.resolve(issuer) {
            Ok(doc) => doc,
            Err(BuiltinError::UnknownIdentifier(_) | BuiltinError::InvalidArgument(_)) => return Ok(None),
            Err(e) => return Err(e.to_string()),
        };
        Ok(doc
            .get("verification_key")
            .and_then(Value::as_str)
            .and_then(|k| VerificationKey::from_b64(k).ok()))
    }
}

impl<T: IssuerKeys + ?Sized> IssuerKeys for std::sync::Arc<T> {
    fn issuer_key(&self, issuer: &str) -> Result<Option<VerificationKey>, String> {
        (**self).issuer_key(issuer)
    }
}

pub fn verify_credential(c: &Credential, keys: &dyn IssuerKeys) -> Result<(), CredentialError> {
    let key = keys
        .issuer_key(&c.issuer)
        .map_err(|reason| CredentialError::IssuerKeyUnavailable {
            issuer: c.issuer.clone(),
            reason,
        })?
        .ok_or_else(|| CredentialError::BadIssuerSignature(c.id.clone()))?;
    key.verify(&c.signing_payload(), &c.issuer_signature)
        .map_err(|_| CredentialError::BadIssuerSignature(c.id.clone()))
}

/// Checks, in order: the holder signature under the main credential's
/// verification key, the challenge, and every issuer signature.
pub fn verify_presentation(
    p: &Presentation,
    expected: &Challenge,
    keys: &dyn IssuerKeys,
) -> Result<(), CredentialError> {
    p.main_credential
        .verification_key
        .verify(&p.signing_payload(), &p.holder_signature)
        .map_err(|_| CredentialError::BadHolderSignature)?;
    if p.challenge != *expected {
        return Err(CredentialError::ChallengeMismatch);
    }
    p.credentials().try_for_each(|c| verify_credential(c, keys))
}

/// Every credential must name the main credential's subject, which must be
/// a DID.
pub fn same_subject(p: &Presentation) -> Result<(), CredentialError> {
    let main = &p.main_credential;
    if !is_did(&main.subject) {
        return Err(CredentialError::InvalidSubject {
            id: main.id.clone(),
            subject: main.subject.clone(),
        });
    }
    let offending: Vec<String> = p
        .additional
        .iter()
        .filter(|c| c.subject != main.subject)
        .map(|c| c.id.clone())
        .collect();
    if offending.is_empty() {
        Ok(())
    } else {
        Err(CredentialError::SubjectMismatch(offending))
    }
}

/// Solutions of `requires_credential(X)` in `policy`, deduplicated in
/// first-seen order. A policy that never mentions the predicate requires
/// nothing.
pub fn required_credentials(policy: &Policy) -> Result<Vec<String>, EvalError> {
    let program = Program::load(std::slice::from_ref(policy), &BuiltinRegistry::new())?;
    let query = Term::compound("requires_credential", vec![Term::var("X")]);
    let solutions = match program.solve_all(&query, &mut Session::new()) {
        Ok(s) => s,
        Err(EvalError::UnknownPredicate { name, arity }) if name == "requires_credential" && arity == 1 => {
            return Ok(Vec::new())
        }
        Err(e) => return Err(e),
    };
    let mut out: Vec<String> = Vec::new();
    for b in solutions {
        if let Some(t) = b.get_named("X") {
            let s = t.to_string();
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// Issues credentials signed with its own key. Its DID document (see
/// [`TestIssuer::did_document`]) must be served by the resolver for
/// verification to succeed.
#[derive(Clone, Debug)]
pub struct TestIssuer {
    pub id: String,
    pub key: SigningKeyPair,
}

impl TestIssuer {
    pub fn new(id: impl Into<String>) -> Self {
        TestIssuer {
            id: id.into(),
            key: SigningKeyPair::generate(),
        }
    }

    pub fn with_key(id: impl Into<String>, key: SigningKeyPair) -> Self {
        TestIssuer { id: id.into(), key }
    }

    pub fn did_document(&self) -> Value {
        serde_json::json!({"id": self.id, "verification_key": self.key.public().to_b64()})
    }

    pub fn issue(
        &self,
        id: impl Into<String>,
        holder: &Wallet,
        claims: impl IntoIterator<Item = (String, ClaimValue)>,
    ) -> Credential {
        let mut c = Credential {
            id: id.into(),
            subject: holder.did.clone(),
            issuer: self.id.clone(),
            claims: claims.into_iter().collect(),
            verification_key: holder.signing.public(),
            encryption_key: holder.encryption.public(),
            issuer_signature: Vec::new(),
        };
        c.issuer_signature = self.key.sign(&c.signing_payload());
        c
    }
}

/// A holder's identity and key material.
#[derive(Clone, Debug)]
pub struct Wallet {
    pub did: String,
    pub signing: SigningKeyPair,
    pub encryption: EncryptionKeyPair,
}

#[derive(Serialize, Deserialize)]
struct WalletFile {
    did: String,
    signing_key: String,
    encryption_key: String,
    #[serde(default)]
    credentials: Vec<Credential>,
}

impl Wallet {
    pub fn generate(did: impl Into<String>) -> Self {
        Wallet {
            did: did.into(),
            signing: SigningKeyPair::generate(),
            encryption: EncryptionKeyPair::generate(),
        }
    }

    /// Presents `main` and `additional` for a request with digest
    /// `challenge`.
    pub fn present(&self, main: Credential, additional: Vec<Credential>, challenge: Challenge) -> Presentation {
        let holder_signature = self.signing.sign(&holder_payload(&main, &additional, challenge));
        Presentation {
            main_credential: main,
            additional,
            challenge,
            holder_signature,
        }
    }

    /// JSON form holding the secret keys and any stored credentials.
    pub fn to_json(&self, credentials: &[Credential]) -> Value {
        serde_json::to_value(WalletFile {
            did: self.did.clone(),
            signing_key: self.signing.secret_b64(),
            encryption_key: self.encryption.secret_b64(),
            credentials: credentials.to_vec(),
        })
        .expect("wallet serializes")
    }

    pub fn from_json(value: Value) -> Result<(Wallet, Vec<Credential>), String> {
        let f: WalletFile = serde_json::from_value(value).map_err(|e| e.to_string())?;
        let wallet = Wallet {
            did: f.did,
            signing: SigningKeyPair::from_b64(&f.signing_key).map_err(|e| e.to_string())?,
            encryption: EncryptionKeyPair::from_b64(&f.encryption_key).map_err(|e| e.to_string())?,
        };
        Ok((wallet, f.credentials))
    }
}
