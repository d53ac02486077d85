use std::collections::HashMap;

use proptest::prelude::*;
use tplmarket_core::canonical::canonical_value;
use tplmarket_core::credentials::{
    same_subject, verify_credential, verify_presentation, Challenge, ClaimValue, Credential, CredentialError,
    Presentation, TestIssuer, Wallet,
};
use tplmarket_core::crypto::VerificationKey;

struct Setup {
    issuer: TestIssuer,
    alice: Wallet,
    keys: HashMap<String, VerificationKey>,
}

fn setup() -> Setup {
    let issuer = TestIssuer::new("did:ex:issuer");
    let keys = HashMap::from([(issuer.id.clone(), issuer.key.public())]);
    Setup {
        issuer,
        alice: Wallet::generate("did:ex:alice"),
        keys,
    }
}

fn claims(org: &str, staff: i64) -> Vec<(String, ClaimValue)> {
    vec![
        ("organization_type".into(), org.into()),
        ("staff".into(), staff.into()),
    ]
}

#[test]
fn every_single_byte_mutation_breaks_the_issuer_signature() {
    let s = setup();
    let c = s.issuer.issue("urn:cred:1", &s.alice, claims("public_university", 10));
    let payload = c.signing_payload();
    let key = s.issuer.key.public();
    assert!(key.verify(&payload, &c.issuer_signature).is_ok());
    for i in 0..payload.len() {
        for flip in [0x01u8, 0x80] {
            let mut m = payload.clone();
            m[i] ^= flip;
            assert!(key.verify(&m, &c.issuer_signature).is_err(), "byte {i} ^ {flip:#x}");
        }
    }
    for i in 0..c.issuer_signature.len() {
        let mut sig = c.issuer_signature.clone();
        sig[i] ^= 0x01;
        assert!(key.verify(&payload, &sig).is_err());
    }
}

#[test]
fn signing_payload_is_canonical() {
    let s = setup();
    let c = s.issuer.issue("urn:cred:1", &s.alice, claims("public_university", 10));
    // Reordering keys in transit does not change what was signed.
    let mut v = serde_json::to_value(&c).unwrap();
    let obj = v.as_object_mut().unwrap();
    let reversed: serde_json::Map<String, serde_json::Value> =
        obj.iter().rev().map(|(k, v)| (k.clone(), v.clone())).collect();
    let back: Credential = serde_json::from_value(serde_json::Value::Object(reversed)).unwrap();
    assert_eq!(back.signing_payload(), c.signing_payload());
    assert_eq!(verify_credential(&back, &s.keys), Ok(()));
    let text = String::from_utf8(c.signing_payload()).unwrap();
    assert!(!text.contains("issuer_signature"));
    let reparsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(canonical_value(&reparsed).unwrap(), c.signing_payload());
}

#[test]
fn field_mutations_are_rejected() {
    let s = setup();
    let c = s.issuer.issue("urn:cred:1", &s.alice, claims("private_research", 10));
    let mutations: Vec<Box<dyn Fn(&mut Credential)>> = vec![
        Box::new(|c| c.id.push('x')),
        Box::new(|c| c.subject = "did:ex:mallory".into()),
        Box::new(|c| {
            c.claims.insert("organization_type".into(), "public_university".into());
        }),
        Box::new(|c| {
            c.claims.insert("staff".into(), 11.into());
        }),
        Box::new(|c| {
            c.claims.insert("staff".into(), "10".into());
        }),
        Box::new(|c| {
            c.claims.insert("extra".into(), "x".into());
        }),
        Box::new(|c| {
            c.claims.remove("staff");
        }),
        Box::new(|c| c.verification_key = Wallet::generate("did:ex:m").signing.public()),
        Box::new(|c| c.encryption_key = Wallet::generate("did:ex:m").encryption.public()),
    ];
    for (i, m) in mutations.iter().enumerate() {
        let mut bad = c.clone();
        m(&mut bad);
        assert_eq!(
            verify_credential(&bad, &s.keys),
            Err(CredentialError::BadIssuerSignature(bad.id.clone())),
            "mutation {i}"
        );
    }
    let mut bad = c.clone();
    bad.issuer = "did:ex:issuer2".into();
    assert!(verify_credential(&bad, &s.keys).is_err());
}

#[test]
fn replayed_presentation_fails_the_challenge() {
    let s = setup();
    let c = s.issuer.issue("urn:cred:1", &s.alice, claims("public_university", 1));
    let first = Challenge([1; 32]);
    let p = s.alice.present(c, vec![], first);
    assert_eq!(verify_presentation(&p, &first, &s.keys), Ok(()));
    assert_eq!(
        verify_presentation(&p, &Challenge([2; 32]), &s.keys),
        Err(CredentialError::ChallengeMismatch)
    );
}

#[test]
fn holder_signature_covers_the_whole_presentation() {
    let s = setup();
    let main = s.issuer.issue("urn:cred:1", &s.alice, claims("public_university", 1));
    let extra = s.issuer.issue("urn:cred:2", &s.alice, claims("hospital", 2));
    let ch = Challenge([9; 32]);
    let p = s.alice.present(main.clone(), vec![extra.clone()], ch);
    assert_eq!(verify_presentation(&p, &ch, &s.keys), Ok(()));

    let mut dropped = p.clone();
    dropped.additional.clear();
    assert_eq!(verify_presentation(&dropped, &ch, &s.keys), Err(CredentialError::BadHolderSignature));

    let mut swapped = p.clone();
    swapped.main_credential = extra;
    swapped.additional = vec![main];
    assert_eq!(verify_presentation(&swapped, &ch, &s.keys), Err(CredentialError::BadHolderSignature));

    // Someone else holding Alice's credential cannot present it.
    let mallory = Wallet::generate("did:ex:mallory");
    let stolen = mallory.present(p.main_credential.clone(), vec![], ch);
    assert_eq!(verify_presentation(&stolen, &ch, &s.keys), Err(CredentialError::BadHolderSignature));
}

#[test]
fn unreachable_key_source_is_distinguished() {
    struct Down;
    impl tplmarket_core::credentials::IssuerKeys for Down {
        fn issuer_key(&self, _: &str) -> Result<Option<VerificationKey>, String> {
            Err("timeout".into())
        }
    }
    let s = setup();
    let c = s.issuer.issue("urn:cred:1", &s.alice, claims("x", 1));
    assert!(matches!(
        verify_credential(&c, &Down),
        Err(CredentialError::IssuerKeyUnavailable { .. })
    ));
}

#[test]
fn empty_additional_list_is_consistent() {
    let s = setup();
    let c = s.issuer.issue("urn:cred:1", &s.alice, claims("x", 1));
    assert_eq!(same_subject(&s.alice.present(c, vec![], Challenge([0; 32]))), Ok(()));
}

#[test]
fn presentation_survives_the_wire() {
    let s = setup();
    let c = s.issuer.issue("urn:cred:1", &s.alice, claims("x", 1));
    let ch = Challenge([4; 32]);
    let p = s.alice.present(c, vec![], ch);
    let text = serde_json::to_string(&p.to_value()).unwrap();
    let back: Presentation = serde_json::from_str(&text).unwrap();
    assert_eq!(verify_presentation(&back, &ch, &s.keys), Ok(()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn same_subject_ignores_order(foreign_mask in prop::collection::vec(any::<bool>(), 0..6), seed in any::<u64>()) {
        let s = setup();
        let mallory = Wallet::generate("did:ex:mallory");
        let main = s.issuer.issue("main", &s.alice, claims("x", 0));
        let mut additional: Vec<Credential> = foreign_mask
            .iter()
            .enumerate()
            .map(|(i, &foreign)| s.issuer.issue(format!("c{i}"), if foreign { &mallory } else { &s.alice }, claims("x", i as i64)))
            .collect();
        let verdict = |add: Vec<Credential>| match same_subject(&s.alice.present(main.clone(), add, Challenge([0; 32]))) {
            Ok(()) => Ok(()),
            Err(CredentialError::SubjectMismatch(mut ids)) => { ids.sort(); Err(ids) }
            Err(e) => panic!("{e}"),
        };
        let before = verdict(additional.clone());
        let mut r = seed;
        for i in (1..additional.len()).rev() {
            r = r.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            additional.swap(i, (r >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(verdict(additional), before.clone());
        prop_assert_eq!(before.is_ok(), !foreign_mask.contains(&true));
    }

    #[test]
    fn issued_credentials_verify(org in "[a-z_]{1,20}", staff in any::<i64>(), id in "[a-z:0-9]{1,30}") {
        let s = setup();
        let c = s.issuer.issue(id, &s.alice, claims(&org, staff));
        prop_assert_eq!(verify_credential(&c, &s.keys), Ok(()));
    }
}
