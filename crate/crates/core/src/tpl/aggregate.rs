//! Conjunction of several sellers' policies into one program.
//!
//! Each policy's predicates are renamed under a namespace derived from the
//! policy id, so helper predicates of different sellers never merge. A
//! synthetic entry clause then calls every member's entry point in turn.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::policy::{Clause, EntryPoint, Policy};
use super::term::Term;

/// Predicates that stay reachable under their plain name in the aggregate.
/// Each gets a bridging clause per member policy that defines it.
pub const SHARED_PREDICATES: &[(&str, usize)] = &[("requires_credential", 1)];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error("no policies to aggregate")]
    Empty,
    #[error("entry point {found} of policy `{policy}` does not have arity {expected}")]
    ArityMismatch {
        policy: String,
        expected: usize,
        found: EntryPoint,
    },
    #[error("policy id `{0}` appears more than once")]
    DuplicatePolicyId(String),
    #[error("predicate {0} is defined under two different policy namespaces")]
    NamespaceCollision(String),
}

/// Namespace prefix for a policy id: the id folded onto atom characters.
pub fn namespace(policy_id: &str) -> String {
    let mut ns: String = policy_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    if !ns.starts_with(|c: char| c.is_ascii_lowercase()) {
        ns.insert(0, 'p');
    }
    ns
}

fn rename_goal(goal: &Term, local: &HashSet<(String, usize)>, prefix: &str) -> Term {
    match goal.indicator() {
        Some((name, arity)) if local.contains(&(name.to_owned(), arity)) => {
            goal.with_functor(Arc::from(format!("{prefix}_{name}")))
        }
        _ => goal.clone(),
    }
}

fn call_with(name: &str, args: &[Term]) -> Term {
    Term::compound(name, args.to_vec())
}

/// Builds the conjunction of `policies`. The result accepts a query to its
/// entry point iff every member accepts the same arguments.
pub fn aggregate_policies(policies: &[Policy]) -> Result<Policy, AggregateError> {
    let first = policies.first().ok_or(AggregateError::Empty)?;
    let arity = first.entry_point().arity;
    let mut seen_ids = HashSet::new();
    let mut seen_namespaces = HashMap::new();
    for p in policies {
        if !seen_ids.insert(p.id()) {
            return Err(AggregateError::DuplicatePolicyId(p.id().to_owned()));
        }
        if p.entry_point().arity != arity {
            return Err(AggregateError::ArityMismatch {
                policy: p.id().to_owned(),
                expected: arity,
                found: p.entry_point().clone(),
            });
        }
        if let Some(other) = seen_namespaces.insert(namespace(p.id()), p.id()) {
            return Err(AggregateError::DuplicatePolicyId(format!("{other} / {}", p.id())));
        }
    }

    let params: Vec<Term> = (1..=arity).map(|i| Term::var(&format!("A{i}"))).collect();
    let entry_name = first.entry_point().name.clone();
    let entry_goals = policies
        .iter()
        .map(|p| call_with(&format!("{}_{}", namespace(p.id()), p.entry_point().name), &params))
        .collect();
    let mut clauses = vec![Clause::new(call_with(&entry_name, &params), entry_goals)];

    let mut owner: HashMap<(String, usize), &str> = HashMap::new();
    let x = [Term::var("X")];
    for p in policies {
        let prefix = namespace(p.id());
        let local: HashSet<(String, usize)> = p.defined_predicates().into_iter().collect();
        for (name, a) in &local {
            let key = (format!("{prefix}_{name}"), *a);
            if let Some(prev) = owner.insert(key.clone(), p.id()) {
                if prev != p.id() {
                    return Err(AggregateError::NamespaceCollision(format!("{}/{}", key.0, key.1)));
                }
            }
        }
        for (name, a) in SHARED_PREDICATES {
            if local.contains(&(name.to_string(), *a)) {
                let args = &x[..*a];
                clauses.push(Clause::new(
                    call_with(name, args),
                    vec![call_with(&format!("{prefix}_{name}"), args)],
                ));
            }
        }
        for c in p.clauses() {
            clauses.push(Clause::new(
                rename_goal(&c.head, &local, &prefix),
                c.body.iter().map(|g| rename_goal(g, &local, &prefix)).collect(),
            ));
        }
    }
    if owner.contains_key(&(entry_name.clone(), arity)) {
        return Err(AggregateError::NamespaceCollision(format!("{entry_name}/{arity}")));
    }

    let id = policies.iter().map(Policy::id).collect::<Vec<_>>().join("+");
    Ok(Policy::from_parts(id, clauses, EntryPoint::new(entry_name, arity)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn namespaces_are_atoms() {
        assert_eq!(namespace("p1"), "p1");
        assert_eq!(namespace("Prod-7"), "prod_7");
        assert_eq!(namespace("9lives"), "p9lives");
        assert!(super::super::term::is_atom_name(&namespace("ÄÖ-x")));
    }

    #[test]
    fn synthetic_entry_and_prefixing() {
        let a = Policy::parse("accept(A, N, C) :- helper(N). helper(N) :- N > 1.", "a").unwrap();
        let b = Policy::parse("accept(A, N, C) :- C == x. requires_credential(org).", "b").unwrap();
        let agg = aggregate_policies(&[a, b]).unwrap();
        let text = agg.to_pretty();
        assert!(text.starts_with("accept(A1, A2, A3) :-\n    a_accept(A1, A2, A3),\n    b_accept(A1, A2, A3)."));
        assert!(text.contains("a_accept(A, N, C) :-\n    a_helper(N)."));
        assert!(text.contains("requires_credential(X) :-\n    b_requires_credential(X)."));
        assert!(text.contains("C == x"));
        // The printed aggregate is a faithful source for itself.
        assert_eq!(Policy::parse(agg.source(), agg.id()).unwrap().clauses(), agg.clauses());
    }

    #[test]
    fn errors() {
        let a = Policy::parse("accept(A, N, C).", "a").unwrap();
        let two = Policy::parse_with_entry("ok(A, B).", "two", EntryPoint::new("ok", 2)).unwrap();
        assert_eq!(aggregate_policies(&[]), Err(AggregateError::Empty));
        assert!(matches!(aggregate_policies(&[a.clone(), two]), Err(AggregateError::ArityMismatch { .. })));
        assert_eq!(
            aggregate_policies(&[a.clone(), a.clone()]),
            Err(AggregateError::DuplicatePolicyId("a".into()))
        );
        let a2 = Policy::parse("accept(A, N, C).", "A").unwrap();
        assert!(matches!(aggregate_policies(&[a, a2]), Err(AggregateError::DuplicatePolicyId(_))));
    }
}
