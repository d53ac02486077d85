use tplmarket_core::builtins::standard_registry;
use tplmarket_core::credentials::{required_credentials, Challenge, ClaimValue, TestIssuer};
use tplmarket_core::node::evaluate;
use tplmarket_core::sandbox::{Sandbox, EXAMPLE_POLICY};
use tplmarket_core::tpl::{
    aggregate_policies, AggregateError, BuiltinRegistry, EntryPoint, Policy, Program, DEFAULT_BUDGET,
};

const MEMBERS: &[(&str, &str)] = &[
    ("example", EXAMPLE_POLICY),
    ("country", include_str!("corpus/07_country.tpl")),
    ("min_records", include_str!("corpus/05_min_records.tpl")),
    ("university", include_str!("corpus/22_university_only.tpl")),
    ("allow", include_str!("corpus/03_allow_all.tpl")),
    ("deny", include_str!("corpus/04_deny_all.tpl")),
    ("type_guards", include_str!("corpus/21_type_guards.tpl")),
    ("tiers", include_str!("corpus/11_tiers.tpl")),
];

struct Fixture {
    registry: BuiltinRegistry,
    presentations: Vec<serde_json::Value>,
}

/// Three credential variants: qualified university, qualified research
/// lab, and a university vouched for by an unlisted issuer from abroad.
fn fixture() -> Fixture {
    let mut sb = Sandbox::new(2);
    let unlisted = TestIssuer::new("did:ex:unlisted");
    sb.add_issuer(&unlisted, false);
    let mut presentations = Vec::new();
    for org in ["public_university", "private_research"] {
        let (wallet, cred) = sb.buyer("did:ex:buyer", org);
        presentations.push(wallet.present(cred, vec![], Challenge([1; 32])).to_value());
    }
    let (wallet, _) = sb.buyer("did:ex:abroad", "public_university");
    let cred = unlisted.issue(
        "urn:cred:abroad",
        &wallet,
        [
            ("organization_type".to_owned(), ClaimValue::from("public_university")),
            ("country".to_owned(), ClaimValue::from("fr")),
        ],
    );
    presentations.push(wallet.present(cred, vec![], Challenge([1; 32])).to_value());
    Fixture {
        registry: standard_registry(sb.services.clone()),
        presentations,
    }
}

fn accepts(program: &Program, entry: &str, doc: &serde_json::Value, n: u64, kind: &str) -> bool {
    let v = evaluate(program, entry, doc.clone(), n, kind, DEFAULT_BUDGET);
    v.outcome.unwrap_or_else(|e| panic!("evaluation error: {e}"))
}

#[test]
fn aggregate_accepts_iff_every_member_accepts() {
    let fx = fixture();
    let policies: Vec<Policy> = MEMBERS.iter().map(|(id, src)| Policy::parse(src, id).unwrap()).collect();
    let singles: Vec<Program> = policies
        .iter()
        .map(|p| Program::load(std::slice::from_ref(p), &fx.registry).unwrap())
        .collect();
    let mut checked = 0;
    let mut both_ways = [0usize; 2];
    for i in 0..policies.len() {
        for j in 0..policies.len() {
            if i == j {
                continue;
            }
            let agg = aggregate_policies(&[policies[i].clone(), policies[j].clone()]).unwrap();
            let program = Program::load(&[agg.clone()], &fx.registry).unwrap();
            for doc in &fx.presentations {
                for n in [50, 101, 200] {
                    for kind in ["machine_learning", "simple_statistics"] {
                        let a = accepts(&singles[i], "accept", doc, n, kind);
                        let b = accepts(&singles[j], "accept", doc, n, kind);
                        let both = accepts(&program, &agg.entry_point().name, doc, n, kind);
                        assert_eq!(
                            both,
                            a && b,
                            "{} + {} with n = {n}, {kind}",
                            policies[i].id(),
                            policies[j].id()
                        );
                        both_ways[both as usize] += 1;
                        checked += 1;
                    }
                }
            }
        }
    }
    assert_eq!(checked, 8 * 7 * 3 * 3 * 2);
    assert!(both_ways[0] > 0 && both_ways[1] > 0, "space exercises only one outcome: {both_ways:?}");
}

#[test]
fn singleton_aggregate_behaves_like_its_member() {
    let fx = fixture();
    for (id, src) in MEMBERS {
        let p = Policy::parse(src, id).unwrap();
        let single = Program::load(&[p.clone()], &fx.registry).unwrap();
        let agg = aggregate_policies(&[p]).unwrap();
        let program = Program::load(&[agg.clone()], &fx.registry).unwrap();
        for doc in &fx.presentations {
            for n in [0, 50, 100, 101, 200, 5000] {
                for kind in ["machine_learning", "simple_statistics", "other"] {
                    assert_eq!(
                        accepts(&program, &agg.entry_point().name, doc, n, kind),
                        accepts(&single, "accept", doc, n, kind),
                        "{id} n = {n} {kind}"
                    );
                }
            }
        }
    }
}

#[test]
fn deny_member_vetoes_everything() {
    let fx = fixture();
    let allow = Policy::parse(include_str!("corpus/03_allow_all.tpl"), "allow").unwrap();
    let deny = Policy::parse(include_str!("corpus/04_deny_all.tpl"), "deny").unwrap();
    let agg = aggregate_policies(&[allow, deny]).unwrap();
    let program = Program::load(&[agg], &fx.registry).unwrap();
    for doc in &fx.presentations {
        for n in [0, 101, 1_000_000] {
            assert!(!accepts(&program, "accept", doc, n, "simple_statistics"));
        }
    }
}

#[test]
fn helpers_of_different_sellers_do_not_mix() {
    let strict = Policy::parse(
        "accept(C, N, T) :- ok(T). ok(machine_learning).",
        "seller-a",
    )
    .unwrap();
    let lax = Policy::parse(
        "accept(C, N, T) :- ok(T), N > 0. ok(_).",
        "seller-b",
    )
    .unwrap();
    let reg = BuiltinRegistry::new();
    let agg = aggregate_policies(&[strict, lax]).unwrap();
    let program = Program::load(&[agg], &reg).unwrap();
    let doc = serde_json::json!({});
    assert!(accepts(&program, "accept", &doc, 5, "machine_learning"));
    // With one shared `ok/1`, seller-b's catch-all fact would admit this.
    assert!(!accepts(&program, "accept", &doc, 5, "simple_statistics"));
    assert!(!accepts(&program, "accept", &doc, 0, "machine_learning"));
}

#[test]
fn aggregate_source_reparses_to_its_clauses() {
    let a = Policy::parse(EXAMPLE_POLICY, "example").unwrap();
    let b = Policy::parse(include_str!("corpus/07_country.tpl"), "country").unwrap();
    let agg = aggregate_policies(&[a, b]).unwrap();
    let again = Policy::parse(agg.source(), agg.id()).unwrap();
    assert_eq!(again.clauses(), agg.clauses());
}

#[test]
fn aggregation_errors() {
    let a = Policy::parse("accept(A, B, C).", "a").unwrap();
    let f = Policy::parse_with_entry("f(a).", "f", EntryPoint::new("f", 1)).unwrap();
    assert_eq!(aggregate_policies(&[]), Err(AggregateError::Empty));
    assert!(matches!(aggregate_policies(&[a.clone(), f]), Err(AggregateError::ArityMismatch { .. })));
    assert!(matches!(aggregate_policies(&[a.clone(), a]), Err(AggregateError::DuplicatePolicyId(_))));
}

#[test]
fn requirements_survive_aggregation_once() {
    let p = |src: &str, id: &str| Policy::parse(src, id).unwrap();
    let stats = p(include_str!("corpus/06_statistics_only.tpl"), "stats");
    let reqs = p(include_str!("corpus/16_requirements.tpl"), "reqs");
    let none = p(EXAMPLE_POLICY, "example");
    assert_eq!(required_credentials(&stats).unwrap(), ["org_affiliation"]);
    assert_eq!(required_credentials(&none).unwrap(), Vec::<String>::new());
    let agg = aggregate_policies(&[stats, none, reqs]).unwrap();
    assert_eq!(required_credentials(&agg).unwrap(), ["org_affiliation", "ethics_approval"]);
}
