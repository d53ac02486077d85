use tplmarket_core::client::ResultValue;
use tplmarket_core::client::BuyError;
use tplmarket_core::credentials::{ClaimValue, TestIssuer};
use tplmarket_core::protocol::{Computation, ErrorCode, Operation};
use tplmarket_core::sandbox::{Sandbox, EXAMPLE_POLICY};
use tplmarket_core::tpl::Policy;

const ALWAYS: &str = "accept(A, B, C).\n";

fn records(n: usize) -> Vec<i64> {
    (0..n as i64).map(|i| i * 3 - 100).collect()
}

fn codes(env: &[tplmarket_core::protocol::ResultEnvelope]) -> Vec<Option<ErrorCode>> {
    env.iter().map(|e| e.error.as_ref().map(|e| e.code)).collect()
}

#[test]
fn honest_machine_learning_request_is_granted() {
    let sb = Sandbox::new(3);
    let data = records(150);
    let p = sb.publish("p1", EXAMPLE_POLICY, &data).unwrap();
    let (wallet, cred) = sb.buyer("did:ex:uni", "public_university");
    let weights: Vec<i64> = (0..150).map(|i| (i % 7) - 3).collect();
    let expected: i128 = data.iter().zip(&weights).map(|(a, b)| *a as i128 * *b as i128).sum();
    let got = sb
        .buy("r1", vec![p], Computation::dot("machine_learning", weights), &wallet, cred)
        .unwrap();
    assert_eq!(got, ResultValue::Integer(expected));
}

#[test]
fn sum_count_mean_over_two_products() {
    let sb = Sandbox::new(3);
    let a = sb.publish("a", EXAMPLE_POLICY, &[3, 5, 7]).unwrap();
    let b = sb.publish("b", EXAMPLE_POLICY, &records(100)).unwrap();
    let (wallet, cred) = sb.buyer("did:ex:lab", "private_research");
    let total: i128 = 15 + records(100).iter().map(|&r| r as i128).sum::<i128>();
    let buy = |op| {
        sb.buy(
            &format!("r-{op}"),
            vec![a.clone(), b.clone()],
            Computation::new("simple_statistics", op),
            &wallet,
            cred.clone(),
        )
    };
    assert_eq!(buy(Operation::Sum).unwrap(), ResultValue::Integer(total));
    assert_eq!(buy(Operation::Count).unwrap(), ResultValue::Integer(103));
    let g = num_integer_gcd(total, 103);
    assert_eq!(
        buy(Operation::Mean).unwrap(),
        ResultValue::Rational {
            numer: total / g,
            denom: 103 / g
        }
    );
}

fn num_integer_gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[test]
fn record_threshold_is_strict() {
    let sb = Sandbox::new(3);
    let (wallet, cred) = sb.buyer("did:ex:lab", "private_research");
    let p100 = sb.publish("p100", EXAMPLE_POLICY, &records(100)).unwrap();
    let err = sb
        .buy("r", vec![p100], Computation::new("simple_statistics", Operation::Sum), &wallet, cred.clone())
        .unwrap_err();
    assert!(err.is_denial());
    let p101 = sb.publish("p101", EXAMPLE_POLICY, &records(101)).unwrap();
    assert!(sb
        .buy("r", vec![p101], Computation::new("simple_statistics", Operation::Sum), &wallet, cred)
        .is_ok());
}

#[test]
fn denial_names_failing_goal() {
    let sb = Sandbox::new(2);
    let p = sb.publish("p", EXAMPLE_POLICY, &records(120)).unwrap();
    let (wallet, cred) = sb.buyer("did:ex:lab", "private_research");
    let req = sb.request("r", vec![p], Computation::new("machine_learning", Operation::Sum), &wallet, cred, vec![]);
    for env in sb.submit(&req) {
        assert!(env.ciphertext.is_none());
        let e = env.error.unwrap();
        assert_eq!(e.code, ErrorCode::PolicyDenied);
        let goal = e.failed_goal.unwrap();
        assert!(goal.contains("acceptComputation(private_research, machine_learning)"), "{goal}");
        assert!(!e.trace.is_empty());
    }
}

#[test]
fn swapped_policy_is_detected_on_every_node() {
    let sb = Sandbox::new(3);
    let mut p = sb.publish("p", EXAMPLE_POLICY, &records(150)).unwrap();
    p.policy = ALWAYS.into();
    let (wallet, cred) = sb.buyer("did:ex:x", "nobody");
    let req = sb.request("r", vec![p], Computation::new("anything", Operation::Sum), &wallet, cred, vec![]);
    let env = sb.submit(&req);
    assert_eq!(codes(&env), vec![Some(ErrorCode::PolicyHashMismatch); 3]);
    assert!(env.iter().all(|e| e.ciphertext.is_none()));
}

#[test]
fn foreign_credential_is_rejected() {
    let sb = Sandbox::new(3);
    let p = sb.publish("p", EXAMPLE_POLICY, &records(150)).unwrap();
    let (wallet, cred) = sb.buyer("did:ex:uni", "public_university");
    let (_, foreign) = sb.buyer("did:ex:mallory", "public_university");
    let req = sb.request(
        "r",
        vec![p],
        Computation::dot("machine_learning", vec![1; 150]),
        &wallet,
        cred,
        vec![foreign],
    );
    assert_eq!(codes(&sb.submit(&req)), vec![Some(ErrorCode::SubjectMismatch); 3]);
}

#[test]
fn replayed_presentation_is_rejected() {
    let sb = Sandbox::new(3);
    let p = sb.publish("p", EXAMPLE_POLICY, &records(150)).unwrap();
    let (wallet, cred) = sb.buyer("did:ex:uni", "public_university");
    let honest = sb.request(
        "r1",
        vec![p.clone()],
        Computation::dot("machine_learning", vec![1; 150]),
        &wallet,
        cred,
        vec![],
    );
    let mut replay = honest.clone();
    replay.request_id = "r2".into();
    replay.computation = Computation::new("machine_learning", Operation::Sum);
    let env = sb.submit(&replay);
    for e in &env {
        let err = e.error.as_ref().unwrap();
        assert_eq!(err.code, ErrorCode::PresentationInvalid);
        assert_eq!(err.reason.as_deref(), Some("challenge_mismatch"));
    }
}

#[test]
fn unqualified_issuer_and_revocation() {
    let mut sb = Sandbox::new(2);
    let policy = EXAMPLE_POLICY.replacen(
        "check_eIDAS_qualified(Issuer),",
        "check_eIDAS_qualified(Issuer),\n  check_not_revoked(BuyerCredential),",
        1,
    );
    let p = sb.publish("p", &policy, &records(150)).unwrap();
    let (wallet, cred) = sb.buyer("did:ex:uni", "public_university");
    let comp = Computation::new("machine_learning", Operation::Count);
    assert!(sb.buy("r1", vec![p.clone()], comp.clone(), &wallet, cred.clone()).is_ok());
    sb.revoke(&cred.id);
    assert!(sb.buy("r2", vec![p.clone()], comp.clone(), &wallet, cred).unwrap_err().is_denial());

    let shady = TestIssuer::new("did:ex:shady");
    sb.add_issuer(&shady, false);
    let (w2, _) = sb.buyer("did:ex:other", "public_university");
    let c2 = shady.issue("c2", &w2, [("organization_type".to_owned(), ClaimValue::from("public_university"))]);
    assert!(sb.buy("r3", vec![p], comp, &w2, c2).unwrap_err().is_denial());
}

#[test]
fn registry_outage_fails_closed() {
    let sb = Sandbox::new(2);
    let p = sb.publish("p", EXAMPLE_POLICY, &records(150)).unwrap();
    let (wallet, cred) = sb.buyer("did:ex:uni", "public_university");
    sb.fetcher.set_down(true);
    sb.services.cache.clear();
    let req = sb.request("r", vec![p], Computation::new("machine_learning", Operation::Sum), &wallet, cred, vec![]);
    let env = sb.submit(&req);
    assert_eq!(codes(&env), vec![Some(ErrorCode::RegistryUnavailable); 2]);
    let err = sb.finalize(&req, &env, &wallet).unwrap_err();
    assert!(!err.is_denial());
}

#[test]
fn product_order_does_not_change_verdicts() {
    let sb = Sandbox::new(3);
    let a = sb.publish("a", EXAMPLE_POLICY, &records(60)).unwrap();
    let b = sb.publish("b", "accept(P, N, T) :- N > 110.\n", &records(60)).unwrap();
    let (wallet, cred) = sb.buyer("did:ex:lab", "private_research");
    let comp = Computation::new("simple_statistics", Operation::Sum);
    let ab = sb.buy("r1", vec![a.clone(), b.clone()], comp.clone(), &wallet, cred.clone()).unwrap();
    let ba = sb.buy("r2", vec![b, a], comp, &wallet, cred).unwrap();
    assert_eq!(ab, ba);
}

#[test]
fn one_stricter_node_blocks_reconstruction() {
    let strict = Policy::parse("accept(P, N, T) :- N > 1000.\n", "strict").unwrap();
    let sb = Sandbox::with_local_policies(3, vec![None, Some(strict), None]);
    let p = sb.publish("p", EXAMPLE_POLICY, &records(150)).unwrap();
    let (wallet, cred) = sb.buyer("did:ex:uni", "public_university");
    let err = sb
        .buy("r", vec![p], Computation::new("machine_learning", Operation::Sum), &wallet, cred)
        .unwrap_err();
    match err {
        BuyError::InsufficientShares { needed, got, refusals } => {
            assert_eq!((needed, got), (3, 2));
            assert_eq!(refusals.len(), 1);
            assert_eq!(refusals[0].node_index, 2);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn computation_errors() {
    let sb = Sandbox::new(2);
    let p = sb.publish("p", EXAMPLE_POLICY, &records(150)).unwrap();
    let (wallet, cred) = sb.buyer("did:ex:uni", "public_university");
    let mut variance = Computation::new("machine_learning", Operation::Sum);
    variance.op = "variance".into();
    let req = sb.request("r", vec![p.clone()], variance, &wallet, cred.clone(), vec![]);
    assert_eq!(codes(&sb.submit(&req)), vec![Some(ErrorCode::UnsupportedComputation); 2]);
    let req = sb.request("r", vec![p.clone()], Computation::dot("machine_learning", vec![1; 3]), &wallet, cred.clone(), vec![]);
    assert_eq!(codes(&sb.submit(&req)), vec![Some(ErrorCode::LengthMismatch); 2]);
    let req = sb.request("r", vec![p.clone()], Computation::dot("machine_learning", vec![i64::MAX; 150]), &wallet, cred.clone(), vec![]);
    assert_eq!(codes(&sb.submit(&req)), vec![Some(ErrorCode::ResultOutOfRange); 2]);
    let mut off_list = p;
    off_list.package_urls.insert(1, "http://evil.example/blob".into());
    let req = sb.request("r", vec![off_list], Computation::new("machine_learning", Operation::Sum), &wallet, cred, vec![]);
    assert_eq!(codes(&sb.submit(&req))[0], Some(ErrorCode::StorageUnreachable));
}

#[test]
fn packages_cannot_be_swapped_between_nodes_or_products() {
    let sb = Sandbox::new(2);
    let a = sb.publish("a", EXAMPLE_POLICY, &records(150)).unwrap();
    let b = sb.publish("b", EXAMPLE_POLICY, &records(150)).unwrap();
    let (wallet, cred) = sb.buyer("did:ex:uni", "public_university");
    let comp = Computation::new("machine_learning", Operation::Sum);
    let mut swapped = a.clone();
    swapped.package_urls.insert(1, a.package_urls[&2].clone());
    let req = sb.request("r", vec![swapped], comp.clone(), &wallet, cred.clone(), vec![]);
    assert_eq!(codes(&sb.submit(&req))[0], Some(ErrorCode::PackageDecryptFailure));
    let mut crossed = a;
    crossed.package_urls = b.package_urls.clone();
    let req = sb.request("r", vec![crossed], comp, &wallet, cred, vec![]);
    assert_eq!(codes(&sb.submit(&req)), vec![Some(ErrorCode::PackageDecryptFailure); 2]);
}

#[test]
fn result_is_not_decryptable_by_others() {
    let sb = Sandbox::new(2);
    let p = sb.publish("p", EXAMPLE_POLICY, &records(150)).unwrap();
    let (wallet, cred) = sb.buyer("did:ex:uni", "public_university");
    let req = sb.request("r", vec![p], Computation::new("machine_learning", Operation::Sum), &wallet, cred, vec![]);
    let env = sb.submit(&req);
    let (eve, _) = sb.buyer("did:ex:eve", "public_university");
    assert!(matches!(sb.finalize(&req, &env, &eve), Err(BuyError::Decrypt(1))));
    assert!(sb.finalize(&req, &env, &wallet).is_ok());
}
