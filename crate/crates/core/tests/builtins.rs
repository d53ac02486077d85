use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use tplmarket_core::builtins::{
    standard_registry, FormatSet, ManualClock, RegistryCache, RegistryUrls, StaticFetcher, TrustServices,
};
use tplmarket_core::credentials::{Challenge, ClaimValue, TestIssuer, Wallet};
use tplmarket_core::tpl::{BuiltinError, EntryPoint, EvalError, Policy, Program, Session, Term};

const BASE: &str = "http://registry.test";

struct World {
    fetcher: Arc<StaticFetcher>,
    clock: Arc<ManualClock>,
    services: Arc<TrustServices>,
    presentation: Value,
}

fn world() -> World {
    let fetcher = Arc::new(StaticFetcher::new());
    let clock = Arc::new(ManualClock::default());
    let urls = RegistryUrls::at(BASE);
    let issuer = TestIssuer::new("did:ex:issuer");
    fetcher.insert(urls.trust_list.clone(), json!({"scheme": "eIDAS", "qualified": ["did:ex:issuer"]}));
    fetcher.insert(urls.revocation.clone(), json!({"revoked": ["urn:cred:revoked"]}));
    fetcher.insert(urls.did_url("did:ex:issuer"), issuer.did_document());
    fetcher.insert(urls.did_url("did:ex:buyer1"), json!({"id": "did:ex:buyer1", "verification_key": "k"}));
    let cache = RegistryCache::with_clock(fetcher.clone(), clock.clone(), Duration::from_secs(300));
    let services = Arc::new(TrustServices::new(urls, cache, FormatSet::bundled()));
    let wallet = Wallet::generate("did:ex:buyer1");
    let cred = issuer.issue(
        "urn:cred:ok",
        &wallet,
        [
            ("organization_type".to_owned(), ClaimValue::from("public_university")),
            ("organization_name".to_owned(), ClaimValue::from("Example Org")),
            ("staff".to_owned(), ClaimValue::Int(1200)),
        ],
    );
    let presentation = wallet.present(cred, vec![], Challenge([3; 32])).to_value();
    World {
        fetcher,
        clock,
        services,
        presentation,
    }
}

impl World {
    /// Runs `body` as the body of `t(VP, Out)` with `VP` bound to the
    /// presentation; returns `Out` on success.
    fn run_on(&self, doc: Value, body: &str) -> Result<Option<Term>, EvalError> {
        let policy = Policy::parse_with_entry(&format!("t(VP, Out) :- {body}."), "t", EntryPoint::new("t", 2)).unwrap();
        let program = Program::load(&[policy], &standard_registry(self.services.clone())).unwrap();
        let mut session = Session::new();
        let h = session.handles.load(doc);
        let q = Term::compound("t", vec![Term::Handle(h), Term::var("Out")]);
        Ok(program.solve(&q, &mut session)?.map(|b| b.get_named("Out").cloned().unwrap_or(Term::var("Out"))))
    }

    fn run(&self, body: &str) -> Result<Option<Term>, EvalError> {
        self.run_on(self.presentation.clone(), body)
    }
}

const MAIN: &str = "set_format(VP, w3c_verifiablePresentation), extract(VP, mainCredential, C), \
                    set_format(C, w3c_verifiableCredential)";

fn builtin_error(r: Result<Option<Term>, EvalError>) -> BuiltinError {
    match r {
        Err(EvalError::Builtin { source, .. }) => source,
        other => panic!("expected a builtin error, got {other:?}"),
    }
}

#[test]
fn set_format_checks_structure() {
    let w = world();
    assert!(w.run("set_format(VP, w3c_verifiablePresentation)").unwrap().is_some());
    assert!(w.run("set_format(VP, w3c_verifiableCredential)").unwrap().is_none());
    assert_eq!(
        builtin_error(w.run("set_format(VP, no_such_format)")),
        BuiltinError::UnknownFormat("no_such_format".into())
    );
    assert!(w.run("set_format(42, w3c_verifiablePresentation)").unwrap().is_none());
}

#[test]
fn extract_navigates_bound_formats() {
    let w = world();
    let org = w.run(&format!("{MAIN}, extract(C, organization_type, Out)")).unwrap().unwrap();
    assert_eq!(org, Term::atom("public_university"));
    let name = w.run(&format!("{MAIN}, extract(C, organization_name, Out)")).unwrap().unwrap();
    assert_eq!(name, Term::text("Example Org"));
    let issuer = w.run(&format!("{MAIN}, extract(C, issuer, Out)")).unwrap().unwrap();
    assert_eq!(issuer, Term::text("did:ex:issuer"));
    assert!(w.run(&format!("{MAIN}, extract(C, nonexistent_field, Out)")).unwrap().is_none());
    assert!(w.run(&format!("{MAIN}, extract(C, mainCredential, Out)")).unwrap().is_none());
    let h = w.run("set_format(VP, w3c_verifiablePresentation), extract(VP, mainCredential, Out)").unwrap().unwrap();
    assert!(matches!(h, Term::Handle(_)));
    assert_eq!(
        builtin_error(w.run("extract(VP, mainCredential, Out)")),
        BuiltinError::FormatNotSet
    );
}

#[test]
fn extracted_values_unify_with_bound_outputs() {
    let w = world();
    assert!(w.run(&format!("{MAIN}, extract(C, organization_type, public_university)")).unwrap().is_some());
    assert!(w.run(&format!("{MAIN}, extract(C, organization_type, private_research)")).unwrap().is_none());
    assert!(w.run(&format!("{MAIN}, extract(C, claims, Cl), extract(Cl, x, Out)")).is_err());
}

#[test]
fn atom_fields_reject_non_atom_strings() {
    let w = world();
    let mut doc = w.presentation.clone();
    doc["mainCredential"]["claims"]["organization_type"] = json!("Public University");
    assert!(w.run_on(doc, &format!("{MAIN}, extract(C, organization_type, Out)")).unwrap().is_none());
}

#[test]
fn qualification_follows_the_trust_list() {
    let w = world();
    assert!(w.run("check_eIDAS_qualified(\"did:ex:issuer\")").unwrap().is_some());
    assert!(w.run("check_eIDAS_qualified(\"did:ex:nobody\")").unwrap().is_none());
    assert!(w.run(&format!("{MAIN}, extract(C, issuer, I), check_eIDAS_qualified(I)")).unwrap().is_some());
}

#[test]
fn cold_cache_outage_is_an_error() {
    let w = world();
    w.fetcher.set_down(true);
    assert!(matches!(
        builtin_error(w.run("check_eIDAS_qualified(\"did:ex:issuer\")")),
        BuiltinError::RegistryUnavailable { .. }
    ));
}

#[test]
fn revocation_checks() {
    let w = world();
    assert!(w.run(&format!("{MAIN}, check_not_revoked(C)")).unwrap().is_some());
    let mut doc = w.presentation.clone();
    doc["mainCredential"]["id"] = json!("urn:cred:revoked");
    assert!(w.run_on(doc.clone(), &format!("{MAIN}, check_not_revoked(C)")).unwrap().is_none());

    let empty = world();
    empty.fetcher.insert(RegistryUrls::at(BASE).revocation, json!({"revoked": []}));
    assert!(empty.run_on(doc, &format!("{MAIN}, check_not_revoked(C)")).unwrap().is_some());
}

#[test]
fn subject_resolution() {
    let w = world();
    let doc = w
        .run("resolve_subject(\"did:ex:buyer1\", D), set_format(D, did_document), extract(D, id, Out)")
        .unwrap()
        .unwrap();
    assert_eq!(doc, Term::text("did:ex:buyer1"));
    assert_eq!(
        builtin_error(w.run("resolve_subject(\"did:ex:ghost\", Out)")),
        BuiltinError::UnknownIdentifier("did:ex:ghost".into())
    );
    assert!(matches!(
        builtin_error(w.run("resolve_subject(\"buyer1\", Out)")),
        BuiltinError::InvalidArgument(_)
    ));
}

#[test]
fn cache_serves_the_first_fetch_within_ttl() {
    let w = world();
    let urls = RegistryUrls::at(BASE);
    let q = "check_eIDAS_qualified(\"did:ex:new\")";
    assert!(w.run(q).unwrap().is_none());
    let hits = w.fetcher.hits();
    w.fetcher
        .insert(urls.trust_list.clone(), json!({"scheme": "eIDAS", "qualified": ["did:ex:issuer", "did:ex:new"]}));
    w.clock.advance(Duration::from_secs(299));
    for _ in 0..10 {
        assert!(w.run(q).unwrap().is_none());
    }
    assert_eq!(w.fetcher.hits(), hits, "served from cache");
    w.clock.advance(Duration::from_secs(2));
    assert!(w.run(q).unwrap().is_some());
}

#[test]
fn expired_entry_with_failed_refresh_is_not_served() {
    let w = world();
    let q = "check_eIDAS_qualified(\"did:ex:issuer\")";
    assert!(w.run(q).unwrap().is_some());
    w.fetcher.set_down(true);
    assert!(w.run(q).unwrap().is_some(), "fresh entry survives an outage");
    w.clock.advance(Duration::from_secs(301));
    assert!(matches!(builtin_error(w.run(q)), BuiltinError::RegistryUnavailable { .. }));
}

#[test]
fn builtins_are_deterministic() {
    let w = world();
    let body = format!("{MAIN}, extract(C, issuer, I), check_eIDAS_qualified(I), check_not_revoked(C), extract(C, organization_type, Out)");
    let first = w.run(&body).unwrap();
    for _ in 0..20 {
        assert_eq!(w.run(&body).unwrap(), first);
    }
}
