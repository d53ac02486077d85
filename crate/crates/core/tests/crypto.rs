use std::collections::HashSet;

use proptest::prelude::*;
use tplmarket_core::crypto::{
    decrypt_result, encrypt_result, hash_policy, open_from_seller, seal_for_node, sha256, CryptoError,
    EncryptionKeyPair, EncryptionPublicKey, PolicyHash, SealedPackage,
};
use tplmarket_core::sandbox::EXAMPLE_POLICY;

fn sealed(payload: &[u8], key: &EncryptionKeyPair) -> SealedPackage {
    seal_for_node(payload, &key.public(), 1, "product-a").unwrap()
}

#[test]
fn policy_hashes() {
    assert_eq!(
        hash_policy(b"").to_string(),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
    assert_eq!(hash_policy(b"abc").0, sha256(b"abc"));
    assert_eq!(
        hash_policy(b"abc").to_string(),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
    let example = hash_policy(EXAMPLE_POLICY.as_bytes());
    assert_eq!(example, hash_policy(EXAMPLE_POLICY.to_owned().as_bytes()));
    let mut edited = EXAMPLE_POLICY.as_bytes().to_vec();
    *edited.last_mut().unwrap() = b' ';
    assert_ne!(hash_policy(&edited), example);
    assert_eq!(example.to_string().parse::<PolicyHash>().unwrap(), example);
}

#[test]
fn one_kib_round_trip() {
    let key = EncryptionKeyPair::generate();
    let payload: Vec<u8> = (0..1024).map(|_| rand::random()).collect();
    assert_eq!(open_from_seller(&sealed(&payload, &key), &key).unwrap(), payload);
}

#[test]
fn tampering_is_detected() {
    let key = EncryptionKeyPair::generate();
    let s = sealed(b"records", &key);
    for i in 0..s.ciphertext.len() {
        let mut t = s.clone();
        t.ciphertext[i] ^= 0x01;
        assert_eq!(open_from_seller(&t, &key), Err(CryptoError::DecryptionFailure));
    }
    let mut t = s.clone();
    t.product_id = "product-b".into();
    assert_eq!(open_from_seller(&t, &key), Err(CryptoError::DecryptionFailure));
    let mut t = s.clone();
    t.nonce[0] ^= 0x80;
    assert_eq!(open_from_seller(&t, &key), Err(CryptoError::DecryptionFailure));
    let mut t = s.clone();
    t.ephemeral_key[5] ^= 0x04;
    assert_eq!(open_from_seller(&t, &key), Err(CryptoError::DecryptionFailure));
    let mut t = s;
    t.nonce.pop();
    assert!(matches!(open_from_seller(&t, &key), Err(CryptoError::MalformedEnvelope(_))));
}

#[test]
fn other_keys_cannot_open() {
    let node1 = EncryptionKeyPair::generate();
    let node2 = EncryptionKeyPair::generate();
    assert_eq!(
        open_from_seller(&sealed(b"for node 1", &node1), &node2),
        Err(CryptoError::DecryptionFailure)
    );
}

#[test]
fn results_are_for_the_buyer_only() {
    let buyer = EncryptionKeyPair::generate();
    let marketplace = EncryptionKeyPair::generate();
    let ct = encrypt_result(b"{\"x\":1,\"y\":\"5\"}", &buyer.public(), b"req|1").unwrap();
    assert_eq!(decrypt_result(&ct, &buyer, b"req|1").unwrap(), b"{\"x\":1,\"y\":\"5\"}");
    assert_eq!(decrypt_result(&ct, &marketplace, b"req|1"), Err(CryptoError::DecryptionFailure));
    assert_eq!(decrypt_result(&ct, &buyer, b"req|2"), Err(CryptoError::DecryptionFailure));
    let mut t = ct.clone();
    *t.ciphertext.last_mut().unwrap() ^= 1;
    assert_eq!(decrypt_result(&t, &buyer, b"req|1"), Err(CryptoError::DecryptionFailure));
}

#[test]
fn package_and_result_keys_are_separated() {
    // A sealed package re-labelled as a result ciphertext must not open.
    let key = EncryptionKeyPair::generate();
    let s = seal_for_node(b"share", &key.public(), 1, "ctx").unwrap();
    let as_result = tplmarket_core::crypto::ResultCiphertext {
        ephemeral_key: s.ephemeral_key,
        nonce: s.nonce,
        ciphertext: s.ciphertext,
    };
    assert_eq!(decrypt_result(&as_result, &key, b"ctx"), Err(CryptoError::DecryptionFailure));
}

#[test]
fn low_order_keys_are_refused() {
    let zero = EncryptionPublicKey([0; 32]);
    assert!(matches!(seal_for_node(b"x", &zero, 1, "p"), Err(CryptoError::MalformedKey(_))));
    assert!(matches!(encrypt_result(b"x", &zero, b""), Err(CryptoError::MalformedKey(_))));
}

#[test]
fn nonces_and_ephemeral_keys_never_repeat() {
    let key = EncryptionKeyPair::generate();
    let mut nonces = HashSet::new();
    let mut ephemerals = HashSet::new();
    for _ in 0..5_000 {
        let s = sealed(b"same payload", &key);
        assert!(nonces.insert(s.nonce.clone()));
        assert!(ephemerals.insert(s.ephemeral_key.clone()));
        let r = encrypt_result(b"same payload", &key.public(), b"c").unwrap();
        assert!(nonces.insert(r.nonce));
        assert!(ephemerals.insert(r.ephemeral_key));
    }
}

#[test]
fn sealed_package_wire_form() {
    let key = EncryptionKeyPair::generate();
    let s = sealed(b"abc", &key);
    let v = serde_json::to_value(&s).unwrap();
    let ct = v["ciphertext"].as_str().unwrap();
    assert!(!ct.contains('=') && !ct.contains('+') && !ct.contains('/'));
    assert_eq!(v["recipient"], 1);
    let back: SealedPackage = serde_json::from_value(v).unwrap();
    assert_eq!(back, s);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn seal_open_round_trips(payload in prop::collection::vec(any::<u8>(), 0..4096), product in "[a-z0-9-]{1,20}") {
        let key = EncryptionKeyPair::generate();
        let s = seal_for_node(&payload, &key.public(), 3, &product).unwrap();
        prop_assert_eq!(open_from_seller(&s, &key).unwrap(), payload);
    }

    #[test]
    fn any_bit_flip_fails(payload in prop::collection::vec(any::<u8>(), 1..512), pick in any::<prop::sample::Index>(), bit in 0u8..8) {
        let key = EncryptionKeyPair::generate();
        let mut s = seal_for_node(&payload, &key.public(), 1, "p").unwrap();
        let i = pick.index(s.ciphertext.len());
        s.ciphertext[i] ^= 1 << bit;
        prop_assert_eq!(open_from_seller(&s, &key), Err(CryptoError::DecryptionFailure));
    }

    #[test]
    fn result_round_trips(payload in prop::collection::vec(any::<u8>(), 0..256), context in prop::collection::vec(any::<u8>(), 0..64)) {
        let buyer = EncryptionKeyPair::generate();
        let ct = encrypt_result(&payload, &buyer.public(), &context).unwrap();
        prop_assert_eq!(decrypt_result(&ct, &buyer, &context).unwrap(), payload);
        prop_assert!(decrypt_result(&ct, &EncryptionKeyPair::generate(), &context).is_err());
    }
}
