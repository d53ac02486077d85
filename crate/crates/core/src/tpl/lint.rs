//! Static checks a seller can run before publishing a policy.

use std::collections::BTreeMap;
use std::fmt;

use super::builtin::BuiltinRegistry;
use super::policy::Policy;
use super::term::Term;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Lint {
    /// A goal calls a predicate that is neither defined nor built in; it
    /// raises an evaluation error when reached.
    UndefinedPredicate { clause: usize, name: String, arity: usize },
    /// A named variable occurs once in its clause.
    Singleton { clause: usize, var: String },
    /// A body goal is not callable (a number, string or variable).
    NotCallable { clause: usize, goal: String },
}

impl Lint {
    /// Lints that make evaluation fail with an error rather than a verdict.
    pub fn is_error(&self) -> bool {
        !matches!(self, Lint::Singleton { .. })
    }
}

impl fmt::Display for Lint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lint::UndefinedPredicate { clause, name, arity } => {
                write!(f, "clause {}: call to undefined predicate {name}/{arity}", clause + 1)
            }
            Lint::Singleton { clause, var } => write!(f, "clause {}: variable {var} occurs only once", clause + 1),
            Lint::NotCallable { clause, goal } => write!(f, "clause {}: goal `{goal}` is not callable", clause + 1),
        }
    }
}

fn count_vars(t: &Term, counts: &mut BTreeMap<String, usize>) {
    match t {
        Term::Var(v) => *counts.entry(v.name().to_owned()).or_default() += 1,
        Term::Compound(_, args) => args.iter().for_each(|a| count_vars(a, counts)),
        _ => {}
    }
}

/// Checks every clause of `policy` against its own definitions and the
/// predicates in `registry`.
pub fn lint(policy: &Policy, registry: &BuiltinRegistry) -> Vec<Lint> {
    let defined = policy.defined_predicates();
    let mut out = Vec::new();
    for (i, clause) in policy.clauses().iter().enumerate() {
        let mut counts = BTreeMap::new();
        count_vars(&clause.head, &mut counts);
        for goal in &clause.body {
            count_vars(goal, &mut counts);
            match goal.indicator() {
                Some((name, arity)) => {
                    let known = registry.contains(name, arity) || defined.iter().any(|(n, a)| n == name && *a == arity);
                    if !known {
                        out.push(Lint::UndefinedPredicate {
                            clause: i,
                            name: name.to_owned(),
                            arity,
                        });
                    }
                }
                None => out.push(Lint::NotCallable {
                    clause: i,
                    goal: goal.to_string(),
                }),
            }
        }
        for (var, n) in counts {
            if n == 1 && !var.starts_with('_') {
                out.push(Lint::Singleton { clause: i, var });
            }
        }
    }
    out
}
